//! Single-consumer inference queue: one thread owns the models and runs
//! jobs in arrival order, so at most one inference is in flight.

use std::sync::mpsc;

use tokio::sync::oneshot;

use crate::Models;

type Job = Box<dyn FnOnce(&Models) + Send>;

#[derive(Clone)]
pub struct Worker {
    jobs: mpsc::Sender<Job>,
}

impl Worker {
    pub fn spawn(models: Models) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        std::thread::Builder::new()
            .name("lightfx-inference".into())
            .spawn(move || {
                for job in rx {
                    job(&models);
                }
            })
            .expect("spawning the inference thread");
        Self { jobs: tx }
    }

    /// Queues `f` and waits for its result; `None` if the worker is gone.
    pub async fn run<T, F>(&self, f: F) -> Option<T>
    where
        T: Send + 'static,
        F: FnOnce(&Models) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Box::new(move |m: &Models| {
                let _ = tx.send(f(m));
            }))
            .ok()?;
        rx.await.ok()
    }
}
