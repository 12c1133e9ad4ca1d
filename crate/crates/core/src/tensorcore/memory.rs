/// Bytes needed to hold one float64 tensor of every listed shape.
pub fn estimate_memory<S: AsRef<[usize]>>(shapes: &[S]) -> u64 {
    shapes
        .iter()
        .map(|s| 8 * s.as_ref().iter().product::<usize>() as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_image_tensor() {
        assert_eq!(estimate_memory(&[[1, 3, 64, 64]]), 98_304);
    }

    #[test]
    fn empty_list_is_zero() {
        let shapes: [Vec<usize>; 0] = [];
        assert_eq!(estimate_memory(&shapes), 0);
    }
}
