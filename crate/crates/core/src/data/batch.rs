use crate::error::{Error, Result};

/// Greedy packing of examples, given their token counts, into batches of at
/// most `max_tokens` tokens. Examples are visited in ascending size with
/// stable ties; returned batches hold indices into `sizes`.
pub fn batch_by_tokens(sizes: &[usize], max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    if let Some(&big) = sizes.iter().find(|&&s| s > max_tokens) {
        return Err(Error::Capacity {
            tokens: big,
            max_tokens,
        });
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| sizes[i]);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        if used + sizes[i] > max_tokens && !cur.is_empty() {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        used += sizes[i];
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_packing() {
        let b = batch_by_tokens(&[10, 10, 10], 25).unwrap();
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(
            batch_by_tokens(&[3, 4, 5], 12).unwrap(),
            vec![vec![0, 1, 2]]
        );
        assert_eq!(
            batch_by_tokens(&[5, 3, 5, 3], 8).unwrap(),
            vec![vec![1, 3], vec![0], vec![2]]
        );
        assert!(matches!(
            batch_by_tokens(&[3, 30], 25),
            Err(Error::Capacity {
                tokens: 30,
                max_tokens: 25
            })
        ));
        assert!(batch_by_tokens(&[], 25).unwrap().is_empty());
    }
}
