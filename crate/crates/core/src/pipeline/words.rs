//! Word sampling for text-image synthesis: uniform length, then a uniform
//! dictionary word of that length; all-digit strings appear with a fixed
//! probability.

use crate::error::{Error, Result};
use crate::rng::Prng;
use rand::Rng;

/// Probability of emitting an all-digit word.
pub const DIGIT_WORD_PROB: f64 = 0.10;
pub const MIN_WORD_LEN: usize = 2;
pub const MAX_WORD_LEN: usize = 13;

/// Dictionary bucketed by word length.
#[derive(Debug, Clone)]
pub struct WordList {
    buckets: Vec<Vec<String>>, // index = length
}

impl WordList {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut buckets: Vec<Vec<String>> = vec![Vec::new(); MAX_WORD_LEN + 1];
        for w in words {
            let len = w.chars().count();
            if (MIN_WORD_LEN..=MAX_WORD_LEN).contains(&len) {
                buckets[len].push(w);
            }
        }
        WordList { buckets }
    }

    pub fn builtin() -> Self {
        Self::new(BUILTIN_WORDS.split_whitespace().map(str::to_string))
    }

    pub fn from_text(text: &str) -> Self {
        Self::new(text.split_whitespace().map(str::to_string))
    }

    pub fn bucket(&self, len: usize) -> &[String] {
        self.buckets.get(len).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws a word: with probability [`DIGIT_WORD_PROB`] an all-digit string of
/// uniform length in [2, max_len], otherwise a uniform dictionary word of a
/// uniform length in the same range.
pub fn sample_word(rng: &mut Prng, max_len: usize, dict: &WordList) -> Result<String> {
    let max_len = max_len.min(MAX_WORD_LEN);
    if max_len < MIN_WORD_LEN {
        return Err(Error::invalid(
            "sample_word",
            format!("max_len {max_len} below minimum {MIN_WORD_LEN}"),
        ));
    }
    let len = rng.gen_range(MIN_WORD_LEN..=max_len);
    if rng.gen::<f64>() < DIGIT_WORD_PROB {
        let digits: String = (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
        return Ok(digits);
    }
    let bucket = dict.bucket(len);
    if bucket.is_empty() {
        return Err(Error::invalid(
            "sample_word",
            format!("dictionary has no words of length {len}"),
        ));
    }
    Ok(bucket[rng.gen_range(0..bucket.len())].clone())
}

const BUILTIN_WORDS: &str = r"
an at be by do go he if in is it me my no of on or so to up us we ox am as
ant bee cat dog egg fox gum hat ice jam key log map net owl pen rat sun tea
van wax yak zoo box cup day ear fig gas hen ink jar kit lip mud nut oak pie
ball cake door fish gold hand iron jump king lamp moon nest open park quiz
rain star tree user view wind yard zero blue corn drum echo frog glue home
idea kite lake mint nose pear ring sand tent unit vase wolf
apple bread chair dream earth fruit grass house juice knife lemon money
night ocean piano queen river stone tiger under voice water young zebra
cloud smile train plant light sound brick candy daisy eagle fence globe
animal bridge camera dinner engine flower guitar hammer island jungle
kettle ladder market number office pencil rabbit school temple valley
window yellow zipper silver stream planet orange garden violin basket
copper donkey forest helmet insect jacket
morning evening country picture science teacher village weather bicycle
captain diamond example factory freedom history journey kitchen library
machine nothing pattern quality rainbow station traffic uniform victory
windows blanket cabbage dolphin electric
mountain computer language medicine business children daughter elephant
festival hospital keyboard learning material notebook painting question
research sandwich thousand umbrella vacation workshop calendar distance
envelope favorite
important beautiful equipment knowledge structure adventure chocolate
dangerous education furniture landscape mountains newspaper orchestra
paragraph scientist telephone vegetable wonderful yesterday committee
breakfast
government management experience technology population restaurant
university literature background retirement basketball dictionary
everything foundation friendship generation
information development environment performance temperature competition
explanation improvement interesting traditional celebration mathematics
photography demonstrate
introduction organization professional relationship construction
contribution distribution championship neighborhood headquarters
conversation intelligence
extraordinary understanding communication international consideration
investigation environmental approximately concentration demonstration
accommodation psychological
";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::text::Charset;

    #[test]
    fn builtin_covers_every_length() {
        let dict = WordList::builtin();
        for len in MIN_WORD_LEN..=MAX_WORD_LEN {
            assert!(
                dict.bucket(len).len() >= 8,
                "only {} words of length {len}",
                dict.bucket(len).len()
            );
        }
        // All builtin words are lowercase letters only.
        let cs = Charset::ground_truth();
        for len in MIN_WORD_LEN..=MAX_WORD_LEN {
            for w in dict.bucket(len) {
                assert!(cs.contains_text(w), "bad word {w:?}");
                assert!(w.chars().all(|c| c.is_ascii_lowercase()), "bad word {w:?}");
                assert_eq!(w.chars().count(), len);
            }
        }
    }

    #[test]
    fn digit_fraction_near_ten_percent() {
        let dict = WordList::builtin();
        let mut r = rng::root(30);
        let n = 100_000;
        let mut digits = 0usize;
        for _ in 0..n {
            let w = sample_word(&mut r, 13, &dict).unwrap();
            assert!((2..=13).contains(&w.chars().count()));
            if w.chars().all(|c| c.is_ascii_digit()) {
                digits += 1;
            }
        }
        let frac = digits as f64 / n as f64;
        // Digit-looking dictionary words do not exist, so this is exactly the
        // branch probability up to sampling error.
        assert!((frac - DIGIT_WORD_PROB).abs() < 0.01, "frac={frac}");
    }

    #[test]
    fn tiny_dictionary_only_options() {
        let dict = WordList::new(["ab".to_string()]);
        let mut r = rng::root(31);
        for _ in 0..200 {
            let w = sample_word(&mut r, 2, &dict).unwrap();
            assert!(w == "ab" || w.chars().all(|c| c.is_ascii_digit()), "{w}");
            assert_eq!(w.len(), 2);
        }
    }

    #[test]
    fn empty_bucket_is_reported() {
        let dict = WordList::new(["ab".to_string()]);
        let mut r = rng::root(32);
        // Lengths up to 5 will eventually hit an empty bucket.
        let err = (0..200)
            .find_map(|_| sample_word(&mut r, 5, &dict).err())
            .expect("empty bucket error");
        assert!(err.to_string().contains("no words of length"));
    }
}
