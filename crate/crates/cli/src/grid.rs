use image::{imageops, Rgb, RgbImage};

/// White gap between cells, in pixels.
pub const GAP: u32 = 4;

/// Tiles `rows` (each a list of equally sized cells) into one image.
pub fn compose_grid(rows: &[Vec<RgbImage>]) -> csgan::Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| csgan::Error::Contract("grid has no cells".into()))?;
    let (w, h) = first.dimensions();
    let cols = rows[0].len() as u32;
    for (i, row) in rows.iter().enumerate() {
        if row.len() as u32 != cols {
            return Err(csgan::Error::Contract(format!("grid row {i} has {} cells, expected {cols}", row.len())));
        }
        if row.iter().any(|c| c.dimensions() != (w, h)) {
            return Err(csgan::Error::Contract(format!("grid row {i} mixes cell sizes")));
        }
    }
    let n_rows = rows.len() as u32;
    let mut out = RgbImage::from_pixel(
        cols * w + (cols - 1) * GAP,
        n_rows * h + (n_rows - 1) * GAP,
        Rgb([255, 255, 255]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let x = c as u32 * (w + GAP);
            let y = r as u32 * (h + GAP);
            imageops::replace(&mut out, cell, i64::from(x), i64::from(y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_land_in_place() {
        let cell = |v| RgbImage::from_pixel(3, 2, Rgb([v, v, v]));
        let rows = vec![vec![cell(10), cell(20)], vec![cell(30), cell(40)]];
        let g = compose_grid(&rows).unwrap();
        assert_eq!(g.dimensions(), (2 * 3 + GAP, 2 * 2 + GAP));
        assert_eq!(g.get_pixel(0, 0)[0], 10);
        assert_eq!(g.get_pixel(3 + GAP, 0)[0], 20);
        assert_eq!(g.get_pixel(0, 2 + GAP)[0], 30);
        assert_eq!(g.get_pixel(3, 0)[0], 255);
    }

    #[test]
    fn ragged_rows_rejected() {
        let cell = RgbImage::new(2, 2);
        assert!(compose_grid(&[vec![cell.clone()], vec![cell.clone(), cell]]).is_err());
    }
}
