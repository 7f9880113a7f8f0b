use crate::error::{FcnaError, Result};
use crate::tensor::{shape_str, Scalar, Tensor};

/// Spatial mean of a `batch × classes × h × w` map, giving `batch × classes`.
pub fn global_average_pool<T: Scalar>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, h, w) = map.dims4()?;
    let area = h * w;
    let scale = T::one() / T::from_f64(area as f64);
    let data = map.data().chunks(area).map(|plane| plane.iter().copied().sum::<T>() * scale).collect();
    Tensor::new(vec![n, k], data)
}

/// Spreads `batch × classes` gradients uniformly over `h × w` positions.
pub fn global_average_pool_backward<T: Scalar>(grad: &Tensor<T>, spatial: (usize, usize)) -> Result<Tensor<T>> {
    let [n, k] = grad.shape()[..] else {
        return Err(FcnaError::shape(
            "global_average_pool_backward",
            "rank 2 (batch x classes)",
            shape_str(grad.shape()),
        ));
    };
    let area = spatial.0 * spatial.1;
    let scale = T::one() / T::from_f64(area as f64);
    let mut out = Tensor::zeros(&[n, k, spatial.0, spatial.1]);
    for (plane, &g) in out.data_mut().chunks_mut(area).zip(grad.data()) {
        plane.fill(g * scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map() {
        let m = Tensor::<f32>::full(&[2, 3, 4, 5], 1.25);
        let p = global_average_pool(&m).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        assert!(p.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn single_position_is_identity() {
        let m = Tensor::<f32>::from_fn(&[2, 3, 1, 1], |i| i as f32 * 0.7 - 1.0);
        let p = global_average_pool(&m).unwrap();
        assert_eq!(p.data(), m.data());
    }

    #[test]
    fn mean_of_known_entries() {
        let m = Tensor::<f64>::from_fn(&[1, 2, 2, 3], |i| (i * i) as f64);
        let p = global_average_pool(&m).unwrap();
        let first: f64 = [0.0, 1.0, 4.0, 9.0, 16.0, 25.0].iter().sum::<f64>() / 6.0;
        let second: f64 = [36.0, 49.0, 64.0, 81.0, 100.0, 121.0].iter().sum::<f64>() / 6.0;
        assert!((p.data()[0] - first).abs() < 1e-12);
        assert!((p.data()[1] - second).abs() < 1e-12);
    }

    #[test]
    fn backward_is_uniform() {
        let g = Tensor::<f32>::new(vec![1, 2], vec![4.0, -8.0]).unwrap();
        let b = global_average_pool_backward(&g, (2, 2)).unwrap();
        assert_eq!(b.data(), &[1.0, 1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0]);
    }
}
