//! Loss/accuracy-versus-epoch figures: an SVG with loss on the left axis
//! and accuracy on the right, plus a JSON legend listing the series.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::EpochRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub axis: String,
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub title: String,
    pub image: String,
    pub series: Vec<Series>,
}

pub fn legend_path(svg: &Path) -> PathBuf {
    svg.with_extension("legend.json")
}

fn series(records: &[EpochRecord]) -> Vec<Series> {
    let make = |name: &str, axis: &str, f: fn(&EpochRecord) -> f64| Series {
        name: name.to_string(),
        axis: axis.to_string(),
        points: records.iter().map(|r| (r.epoch, f(r))).collect(),
    };
    vec![
        make("train_loss", "loss", |r| r.train_loss),
        make("val_loss", "loss", |r| r.val_loss),
        make("train_acc", "accuracy", |r| r.train_acc),
        make("val_acc", "accuracy", |r| r.val_acc),
    ]
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Runtime(format!("plotting failed: {e}"))
}

/// Writes `svg` and its legend sidecar; returns the legend.
pub fn plot_curves(records: &[EpochRecord], title: &str, svg: &Path) -> Result<Legend> {
    if records.is_empty() {
        return Err(Error::Data("no epochs to plot".into()));
    }
    let all = series(records);
    let last_epoch = records.iter().map(|r| r.epoch).max().unwrap_or(0);
    let max_loss = all[..2]
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let x_range = 0f64..(last_epoch.max(1)) as f64;
    let y_loss = 0f64..(max_loss * 1.1).max(1e-3);
    {
        let root = SVGBackend::new(svg, (900, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .right_y_label_area_size(56)
            .build_cartesian_2d(x_range.clone(), y_loss)
            .map_err(plot_err)?
            .set_secondary_coord(x_range, 0f64..1.0);
        chart
            .configure_mesh()
            .x_desc("Epoch")
            .y_desc("Loss")
            .draw()
            .map_err(plot_err)?;
        chart
            .configure_secondary_axes()
            .y_desc("Accuracy")
            .draw()
            .map_err(plot_err)?;
        let colors = [RED, MAGENTA, BLUE, CYAN];
        for (s, color) in all.iter().zip(colors) {
            let pts: Vec<(f64, f64)> = s.points.iter().map(|&(e, v)| (e as f64, v)).collect();
            let style = ShapeStyle::from(&color).stroke_width(2);
            if s.axis == "loss" {
                chart
                    .draw_series(LineSeries::new(pts.clone(), style))
                    .map_err(plot_err)?
                    .label(s.name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
                chart
                    .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                    .map_err(plot_err)?;
            } else {
                chart
                    .draw_secondary_series(LineSeries::new(pts.clone(), style))
                    .map_err(plot_err)?
                    .label(s.name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
                chart
                    .draw_secondary_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                    .map_err(plot_err)?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::MiddleRight)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let legend = Legend {
        title: title.to_string(),
        image: svg.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        series: all,
    };
    let side = legend_path(svg);
    let json = serde_json::to_string_pretty(&legend).expect("plain struct");
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(legend)
}
