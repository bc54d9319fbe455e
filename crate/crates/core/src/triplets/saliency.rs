use crate::imagecore::Image;
use crate::scalar::Scalar;

/// `clamp(mean(top 1% luminance) - median(luminance), 0, 1)`.
pub fn light_saliency<S: Scalar>(image: &Image<S>) -> f64 {
    let mut lum: Vec<f64> = image.luminance().into_iter().map(Scalar::as_f64).collect();
    lum.sort_by(f64::total_cmp);
    let n = lum.len();
    let median = if n % 2 == 1 { lum[n / 2] } else { 0.5 * (lum[n / 2 - 1] + lum[n / 2]) };
    let k = ((n as f64) * 0.01).ceil().max(1.0) as usize;
    let top = lum[n - k..].iter().sum::<f64>() / k as f64;
    (top - median).clamp(0.0, 1.0)
}

/// Indices of images whose saliency reaches `threshold`.
pub fn select<S: Scalar>(images: &[Image<S>], threshold: f64) -> Vec<usize> {
    images.iter().enumerate().filter(|(_, im)| light_saliency(*im) >= threshold).map(|(i, _)| i).collect()
}
