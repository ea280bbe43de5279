//! Schedule CSV, JSON diagnostics and value-grid dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use amm_exec_core::dp::TradeRecord;
use amm_exec_core::grid::ValueGrid;
use amm_exec_core::Schedule;
use serde::{Deserialize, Serialize};

use crate::config::DumpFormat;
use crate::error::CliError;
use crate::run::RunOutput;

/// One line of a schedule file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub step: usize,
    pub time: f64,
    pub trade: f64,
    pub inventory_after: f64,
    pub cash_flow: f64,
    pub spot_before: f64,
    pub spot_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub step: usize,
    pub time: f64,
    pub inventory: f64,
}

/// One point of a long-format plotting table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

pub fn schedule_rows(times: &[f64], records: &[TradeRecord]) -> Vec<ScheduleRow> {
    records
        .iter()
        .zip(times)
        .enumerate()
        .map(|(step, (r, &time))| ScheduleRow {
            step,
            time,
            trade: r.trade,
            inventory_after: r.inventory_after,
            cash_flow: r.cash_flow,
            spot_before: r.spot_before,
            spot_after: r.spot_after,
        })
        .collect()
}

/// Inventory held at each time, starting with the full order at `t_0`
/// before the first trade.
pub fn inventory_rows(times: &[f64], schedule: &Schedule, order_size: f64) -> Vec<InventoryRow> {
    let before = schedule.inventory_before(order_size);
    times.iter().zip(before).enumerate().map(|(step, (&time, inventory))| InventoryRow { step, time, inventory }).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::io(path.display(), e))?;
    }
    writer.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_schedule(path: &Path) -> Result<Schedule, CliError> {
    let rows: Vec<ScheduleRow> = read_csv(path)?;
    Ok(Schedule::new(rows.iter().map(|r| r.trade).collect()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|e| CliError::io(path.display(), e))?;
    writer.write_all(b"\n").and_then(|_| writer.flush()).map_err(|e| CliError::io(path.display(), e))
}

pub fn dump_grid(path: &Path, grid: &ValueGrid, format: DumpFormat) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut writer = BufWriter::new(file);
    match format {
        DumpFormat::Bincode => bincode::serialize_into(&mut writer, grid).map_err(|e| CliError::io(path.display(), e))?,
        DumpFormat::Json => serde_json::to_writer(&mut writer, grid).map_err(|e| CliError::io(path.display(), e))?,
    }
    writer.flush().map_err(|e| CliError::io(path.display(), e))
}

/// Reads a dump written by [`dump_grid`]; the format follows the extension
/// (`.json` or anything else for bincode).
pub fn load_grid(path: &Path) -> Result<ValueGrid, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_reader(reader).map_err(|e| CliError::io(path.display(), e))
    } else {
        bincode::deserialize_from(reader).map_err(|e| CliError::io(path.display(), e))
    }
}

pub fn grid_file_name(format: DumpFormat) -> &'static str {
    match format {
        DumpFormat::Bincode => "value_grid.bin",
        DumpFormat::Json => "value_grid.json",
    }
}

/// Writes `schedule.csv`, `inventory.csv`, `diagnostics.json`, `timing.json`
/// and, when requested, the value grid dump into `dir`. Everything except
/// the timing file and the grid dump (which carries solver timings) is a
/// deterministic function of the configuration.
pub fn write_run(dir: &Path, run: &RunOutput, dump: Option<DumpFormat>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_csv(&dir.join("schedule.csv"), &schedule_rows(&run.times, &run.records))?;
    write_csv(&dir.join("inventory.csv"), &inventory_rows(&run.times, &run.schedule, run.order_size))?;
    write_json(&dir.join("diagnostics.json"), &run.diagnostics)?;
    write_json(&dir.join("timing.json"), &run.timing)?;
    if let (Some(format), Some(grid)) = (dump, &run.grid) {
        dump_grid(&dir.join(grid_file_name(format)), grid, format)?;
    }
    Ok(())
}
