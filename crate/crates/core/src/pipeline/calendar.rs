//! Day-of-year bookkeeping on the proleptic Gregorian calendar.

use chrono::{Datelike, NaiveDate};

/// Slots in a climatology: 365 regular days plus one for 29 February.
pub const DOY_SLOTS: usize = 366;
/// Slot holding 29 February.
pub const LEAP_SLOT: usize = 365;
/// Slots of 28 February and 1 March.
pub const FEB28_SLOT: usize = 58;
pub const MAR1_SLOT: usize = 59;

pub fn is_leap(year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, 2, 29).is_some()
}

/// Climatology slot of a date. Regular days map onto a 365-day calendar
/// (`0..365`); 29 February gets [`LEAP_SLOT`].
pub fn doy_slot(date: NaiveDate) -> usize {
    let ord = date.ordinal0() as usize;
    if !is_leap(date.year()) || ord < FEB28_SLOT + 1 {
        ord
    } else if ord == FEB28_SLOT + 1 {
        LEAP_SLOT
    } else {
        ord - 1
    }
}

/// Circular distance between two regular slots on the 365-day calendar.
pub fn slot_distance(a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(365 - d)
}

pub fn days_in_year(year: i32) -> usize {
    if is_leap(year) {
        366
    } else {
        365
    }
}

/// All dates from `start` for `n` days.
pub fn date_range(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start.iter_days().take(n).collect()
}

pub fn year_start(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year")
}

/// Meteorological half-year of the month: March through August.
pub fn is_mamjja(date: NaiveDate) -> bool {
    (3..=8).contains(&date.month())
}
