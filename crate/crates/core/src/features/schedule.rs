use crate::ingest::{Schedule, BLOCKS_PER_DAY, DAYS_PER_WEEK};

use super::FeatureError;

/// Per-weekday business and break hours, Monday first.
///
/// Business hours are half the number of open blocks. Break hours are half the
/// number of closed blocks strictly between the first and last open block of
/// the day. A fully closed day has 0 of both.
pub fn encode_schedule(schedule: &Schedule) -> ([f64; 7], [f64; 7]) {
    let mut business = [0.0; 7];
    let mut breaks = [0.0; 7];
    for day in 0..DAYS_PER_WEEK {
        let cells = schedule.day(day);
        let Some(first) = cells.iter().position(|&c| c) else {
            continue;
        };
        let last = cells.iter().rposition(|&c| c).unwrap_or(first);
        let open = cells[first..=last].iter().filter(|&&c| c).count();
        business[day] = 0.5 * open as f64;
        breaks[day] = 0.5 * (last + 1 - first - open) as f64;
    }
    (business, breaks)
}

/// [`encode_schedule`] for a raw nested grid, validating its `7 x 48` shape.
pub fn encode_grid(grid: &[Vec<bool>]) -> Result<([f64; 7], [f64; 7]), FeatureError> {
    if grid.len() != DAYS_PER_WEEK || grid.iter().any(|r| r.len() != BLOCKS_PER_DAY) {
        return Err(FeatureError::Shape(format!(
            "expected a {DAYS_PER_WEEK}x{BLOCKS_PER_DAY} grid, got {} rows",
            grid.len()
        )));
    }
    let schedule = Schedule::from_grid(grid).map_err(|e| FeatureError::Shape(e.to_string()))?;
    Ok(encode_schedule(&schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 09:00 is block 18
    const NINE: usize = 18;

    #[test]
    fn contiguous_day() {
        let mut s = Schedule::closed();
        s.open_range(0, NINE, NINE + 16);
        let (business, breaks) = encode_schedule(&s);
        assert_eq!(business[0], 8.0);
        assert_eq!(breaks[0], 0.0);
        assert_eq!(business[1..], [0.0; 6]);
    }

    #[test]
    fn one_hour_lunch_gap() {
        let mut s = Schedule::closed();
        s.open_range(2, NINE, NINE + 6); // 09:00-12:00
        s.open_range(2, NINE + 8, NINE + 16); // 13:00-17:00
        let (business, breaks) = encode_schedule(&s);
        assert_eq!(business[2], 7.0);
        assert_eq!(breaks[2], 1.0);
    }

    #[test]
    fn closed_week() {
        let (business, breaks) = encode_schedule(&Schedule::closed());
        assert_eq!(business, [0.0; 7]);
        assert_eq!(breaks, [0.0; 7]);
    }

    #[test]
    fn grid_shape_is_checked() {
        assert!(encode_grid(&vec![vec![false; 48]; 6]).is_err());
        assert!(encode_grid(&vec![vec![false; 49]; 7]).is_err());
        assert!(encode_grid(&vec![vec![true; 48]; 7]).is_ok());
    }

    proptest! {
        #[test]
        fn business_hours_are_half_the_open_blocks(cells in proptest::collection::vec(any::<bool>(), 336)) {
            let s = Schedule::from_cells(cells).unwrap();
            let (business, breaks) = encode_schedule(&s);
            let total: f64 = business.iter().sum();
            prop_assert_eq!(total, 0.5 * s.open_blocks() as f64);
            for day in 0..7 {
                prop_assert!(business[day] + breaks[day] <= 24.0);
                prop_assert!(breaks[day] >= 0.0);
            }
        }
    }
}
