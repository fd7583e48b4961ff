//! LAS 1.2 binary point files: header parsing, streamed record decoding and
//! a matching writer for point formats 0 through 3.
//!
//! All multi-byte fields are little-endian. Variable-length records between
//! the header and the point data are skipped, not interpreted.

use std::io::Read;

use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};

/// Fixed size of a LAS 1.2 public header block.
pub const HEADER_SIZE: u16 = 227;

/// Minimum point record length per point format id (0..=3).
pub const MIN_RECORD_LENGTH: [u16; 4] = [20, 28, 26, 34];

/// Records are decoded in batches of this many to keep ingestion memory
/// bounded by chunk + output regardless of file size.
const CHUNK_RECORDS: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum LasError {
    #[error("bad signature {0:?}, expected \"LASF\"")]
    BadSignature([u8; 4]),
    #[error("unsupported point format {0} (supported: 0-3)")]
    UnsupportedFormat(u8),
    #[error("truncated input: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("truncated point data: {records_read} of {expected} records read")]
    TruncatedPoints { records_read: u32, expected: u32 },
    #[error("non-positive {axis} scale {value}")]
    NonPositiveScale { axis: char, value: f64 },
    #[error("non-finite {axis} offset {value}")]
    NonFiniteOffset { axis: char, value: f64 },
    #[error("header size {0} below the LAS 1.2 minimum of 227")]
    HeaderTooSmall(u16),
    #[error("point record length {got} below the format-{format} minimum of {min}")]
    RecordTooShort { format: u8, got: u16, min: u16 },
    #[error("point data offset {offset} precedes header end {header_size}")]
    BadDataOffset { offset: u32, header_size: u16 },
    #[error("{axis} coordinate {value} does not fit a 32-bit raw value at scale {scale}, offset {offset}")]
    QuantizationOverflow {
        axis: char,
        value: f64,
        scale: f64,
        offset: f64,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed LAS 1.2 public header (the subset this library interprets).
#[derive(Clone, Debug, PartialEq)]
pub struct LasHeader {
    pub signature: [u8; 4],
    pub version_major: u8,
    pub version_minor: u8,
    pub header_size: u16,
    pub point_data_offset: u32,
    pub point_format_id: u8,
    pub point_record_length: u16,
    pub point_count: u32,
    /// Per-axis de-quantization scale (x, y, z); strictly positive.
    pub scale: [f64; 3],
    /// Per-axis de-quantization offset (x, y, z).
    pub offset: [f64; 3],
    pub max: [f64; 3],
    pub min: [f64; 3],
}

impl LasHeader {
    pub fn has_rgb(&self) -> bool {
        self.point_format_id == 2 || self.point_format_id == 3
    }
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn i32_at(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Parse and validate a LAS 1.2 header from the start of a file.
///
/// Field offsets: signature at 0, version at 24-25, header size at 94, point
/// data offset at 96, point format at 104, record length at 105, point count
/// at 107, scales at 131/139/147, offsets at 155/163/171, then max/min x, y,
/// z interleaved from 179.
pub fn parse_las_header(bytes: &[u8]) -> Result<LasHeader, LasError> {
    if bytes.len() < 4 {
        return Err(LasError::Truncated {
            needed: 4,
            got: bytes.len(),
        });
    }
    let signature: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &signature != b"LASF" {
        return Err(LasError::BadSignature(signature));
    }
    if bytes.len() < HEADER_SIZE as usize {
        return Err(LasError::Truncated {
            needed: HEADER_SIZE as usize,
            got: bytes.len(),
        });
    }
    let header_size = u16_at(bytes, 94);
    if header_size < HEADER_SIZE {
        return Err(LasError::HeaderTooSmall(header_size));
    }
    if bytes.len() < header_size as usize {
        return Err(LasError::Truncated {
            needed: header_size as usize,
            got: bytes.len(),
        });
    }
    let point_format_id = bytes[104];
    if point_format_id > 3 {
        return Err(LasError::UnsupportedFormat(point_format_id));
    }
    let point_record_length = u16_at(bytes, 105);
    let min = MIN_RECORD_LENGTH[point_format_id as usize];
    if point_record_length < min {
        return Err(LasError::RecordTooShort {
            format: point_format_id,
            got: point_record_length,
            min,
        });
    }
    let point_data_offset = u32_at(bytes, 96);
    if point_data_offset < header_size as u32 {
        return Err(LasError::BadDataOffset {
            offset: point_data_offset,
            header_size,
        });
    }
    let scale = [f64_at(bytes, 131), f64_at(bytes, 139), f64_at(bytes, 147)];
    for (axis, &s) in ['x', 'y', 'z'].iter().zip(&scale) {
        if !(s.is_finite() && s > 0.0) {
            return Err(LasError::NonPositiveScale { axis: *axis, value: s });
        }
    }
    let offset = [f64_at(bytes, 155), f64_at(bytes, 163), f64_at(bytes, 171)];
    for (axis, &o) in ['x', 'y', 'z'].iter().zip(&offset) {
        if !o.is_finite() {
            return Err(LasError::NonFiniteOffset { axis: *axis, value: o });
        }
    }
    Ok(LasHeader {
        signature,
        version_major: bytes[24],
        version_minor: bytes[25],
        header_size,
        point_data_offset,
        point_format_id,
        point_record_length,
        point_count: u32_at(bytes, 107),
        scale,
        offset,
        max: [f64_at(bytes, 179), f64_at(bytes, 195), f64_at(bytes, 211)],
        min: [f64_at(bytes, 187), f64_at(bytes, 203), f64_at(bytes, 219)],
    })
}

/// Decode all point records described by `header` from a stream positioned
/// at byte 0 of the file.
///
/// Raw 32-bit X/Y/Z at record offsets 0/4/8 de-quantize as
/// `coordinate = raw * scale + offset`. Intensity (offset 12) and
/// classification (offset 15) are decoded for every format; formats 2 and 3
/// additionally carry RGB as the trailing three 16-bit words.
pub fn read_las_points<R: Read>(mut source: R, header: &LasHeader) -> Result<PointCloud, LasError> {
    // Skip header + VLRs to the start of point data.
    let mut to_skip = header.point_data_offset as u64;
    let mut sink = [0u8; 4096];
    while to_skip > 0 {
        let take = to_skip.min(sink.len() as u64) as usize;
        let got = source.read(&mut sink[..take])?;
        if got == 0 {
            return Err(LasError::TruncatedPoints {
                records_read: 0,
                expected: header.point_count,
            });
        }
        to_skip -= got as u64;
    }

    let n = header.point_count as usize;
    let rec_len = header.point_record_length as usize;
    let rgb_offset = match header.point_format_id {
        2 => Some(20),
        3 => Some(28),
        _ => None,
    };

    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut classification = Vec::with_capacity(n);
    let mut rgb = rgb_offset.map(|_| {
        [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ]
    });

    let mut chunk = vec![0u8; CHUNK_RECORDS * rec_len];
    let mut read_total = 0usize;
    while read_total < n {
        let want_records = (n - read_total).min(CHUNK_RECORDS);
        let want_bytes = want_records * rec_len;
        let mut filled = 0usize;
        while filled < want_bytes {
            let got = source.read(&mut chunk[filled..want_bytes])?;
            if got == 0 {
                return Err(LasError::TruncatedPoints {
                    records_read: (read_total + filled / rec_len) as u32,
                    expected: header.point_count,
                });
            }
            filled += got;
        }
        for r in 0..want_records {
            let rec = &chunk[r * rec_len..(r + 1) * rec_len];
            xs.push(i32_at(rec, 0) as f64 * header.scale[0] + header.offset[0]);
            ys.push(i32_at(rec, 4) as f64 * header.scale[1] + header.offset[1]);
            zs.push(i32_at(rec, 8) as f64 * header.scale[2] + header.offset[2]);
            intensity.push(u16_at(rec, 12));
            classification.push(rec[15]);
            if let (Some(chans), Some(at)) = (rgb.as_mut(), rgb_offset) {
                chans[0].push(u16_at(rec, at));
                chans[1].push(u16_at(rec, at + 2));
                chans[2].push(u16_at(rec, at + 4));
            }
        }
        read_total += want_records;
    }

    Ok(PointCloud::from_parts(
        xs,
        ys,
        zs,
        Some(intensity),
        rgb,
        Some(classification),
    )?)
}

fn quantize(axis: char, value: f64, scale: f64, offset: f64) -> Result<i32, LasError> {
    let raw = ((value - offset) / scale).round();
    if !(raw >= i32::MIN as f64 && raw <= i32::MAX as f64) {
        return Err(LasError::QuantizationOverflow {
            axis,
            value,
            scale,
            offset,
        });
    }
    Ok(raw as i32)
}

/// Encode a cloud as a LAS 1.2 file with minimum-length records for the
/// chosen point format.
///
/// Coordinates quantize to `round((coordinate - offset) / scale)`; any value
/// outside the signed 32-bit raw range is an error. The header bounds are
/// the min/max of the *de-quantized* coordinates so that parsing the output
/// reproduces the quantized cloud and its bounding box exactly.
pub fn write_las(
    cloud: &PointCloud,
    format_id: u8,
    scale: [f64; 3],
    offset: [f64; 3],
) -> Result<Vec<u8>, LasError> {
    if format_id > 3 {
        return Err(LasError::UnsupportedFormat(format_id));
    }
    for (axis, &s) in ['x', 'y', 'z'].iter().zip(&scale) {
        if !(s.is_finite() && s > 0.0) {
            return Err(LasError::NonPositiveScale { axis: *axis, value: s });
        }
    }
    for (axis, &o) in ['x', 'y', 'z'].iter().zip(&offset) {
        if !o.is_finite() {
            return Err(LasError::NonFiniteOffset { axis: *axis, value: o });
        }
    }
    let n = cloud.len();
    assert!(n <= u32::MAX as usize, "LAS 1.2 point count is 32-bit");
    let rec_len = MIN_RECORD_LENGTH[format_id as usize];

    let mut records = Vec::with_capacity(n * rec_len as usize);
    let mut max = [f64::NEG_INFINITY; 3];
    let mut min = [f64::INFINITY; 3];
    let mut rec = vec![0u8; rec_len as usize];
    for i in 0..n {
        let p = cloud.point(i);
        rec.fill(0);
        for d in 0..3 {
            let raw = quantize(['x', 'y', 'z'][d], p[d], scale[d], offset[d])?;
            rec[d * 4..d * 4 + 4].copy_from_slice(&raw.to_le_bytes());
            let requantized = raw as f64 * scale[d] + offset[d];
            min[d] = min[d].min(requantized);
            max[d] = max[d].max(requantized);
        }
        let inten = cloud.intensity().map_or(0, |v| v[i]);
        rec[12..14].copy_from_slice(&inten.to_le_bytes());
        rec[14] = 0x09; // single return: return number 1 of 1
        rec[15] = cloud.classification().map_or(0, |v| v[i]);
        if format_id == 2 || format_id == 3 {
            let at = if format_id == 2 { 20 } else { 28 };
            let (r, g, b) = cloud
                .rgb()
                .map_or((0, 0, 0), |c| (c[0][i], c[1][i], c[2][i]));
            rec[at..at + 2].copy_from_slice(&r.to_le_bytes());
            rec[at + 2..at + 4].copy_from_slice(&g.to_le_bytes());
            rec[at + 4..at + 6].copy_from_slice(&b.to_le_bytes());
        }
        records.extend_from_slice(&rec);
    }
    if n == 0 {
        min = [0.0; 3];
        max = [0.0; 3];
    }

    let mut out = vec![0u8; HEADER_SIZE as usize];
    out[0..4].copy_from_slice(b"LASF");
    out[24] = 1;
    out[25] = 2;
    let software = b"lidarkd";
    out[58..58 + software.len()].copy_from_slice(software);
    out[94..96].copy_from_slice(&HEADER_SIZE.to_le_bytes());
    out[96..100].copy_from_slice(&(HEADER_SIZE as u32).to_le_bytes());
    out[104] = format_id;
    out[105..107].copy_from_slice(&rec_len.to_le_bytes());
    out[107..111].copy_from_slice(&(n as u32).to_le_bytes());
    // all points written as first returns
    out[111..115].copy_from_slice(&(n as u32).to_le_bytes());
    for d in 0..3 {
        out[131 + d * 8..139 + d * 8].copy_from_slice(&scale[d].to_le_bytes());
        out[155 + d * 8..163 + d * 8].copy_from_slice(&offset[d].to_le_bytes());
        out[179 + d * 16..187 + d * 16].copy_from_slice(&max[d].to_le_bytes());
        out[187 + d * 16..195 + d * 16].copy_from_slice(&min[d].to_le_bytes());
    }
    out.extend_from_slice(&records);
    Ok(out)
}

/// Parse the header and decode every record of a LAS byte buffer.
pub fn read_las(bytes: &[u8]) -> Result<(LasHeader, PointCloud), LasError> {
    let header = parse_las_header(bytes)?;
    let cloud = read_las_points(bytes, &header)?;
    Ok((header, cloud))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud3() -> PointCloud {
        PointCloud::from_parts(
            vec![1.111, 2.222, 3.333],
            vec![-4.004, 5.05, 6.0],
            vec![0.001, 0.002, 0.003],
            Some(vec![100, 200, 300]),
            Some([vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]),
            Some(vec![2, 3, 4]),
        )
        .unwrap()
    }

    #[test]
    fn writer_output_parses_with_expected_format() {
        let bytes = write_las(&cloud3(), 1, [0.001; 3], [0.0; 3]).unwrap();
        let header = parse_las_header(&bytes).unwrap();
        assert_eq!(&header.signature, b"LASF");
        assert_eq!((header.version_major, header.version_minor), (1, 2));
        assert_eq!(header.point_format_id, 1);
        assert_eq!(header.point_record_length, 28);
        assert_eq!(header.point_count, 3);
    }

    #[test]
    fn bad_signature_is_rejected() {
        let mut bytes = write_las(&cloud3(), 0, [0.01; 3], [0.0; 3]).unwrap();
        bytes[3] = b'X';
        assert!(matches!(
            parse_las_header(&bytes),
            Err(LasError::BadSignature(sig)) if &sig == b"LASX"
        ));
    }

    #[test]
    fn unsupported_format_is_rejected() {
        let mut bytes = write_las(&cloud3(), 0, [0.01; 3], [0.0; 3]).unwrap();
        bytes[104] = 6;
        assert!(matches!(
            parse_las_header(&bytes),
            Err(LasError::UnsupportedFormat(6))
        ));
    }

    #[test]
    fn truncated_header_is_rejected() {
        let bytes = write_las(&cloud3(), 0, [0.01; 3], [0.0; 3]).unwrap();
        assert!(matches!(
            parse_las_header(&bytes[..100]),
            Err(LasError::Truncated { .. })
        ));
        assert!(matches!(
            parse_las_header(&bytes[..3]),
            Err(LasError::Truncated { .. })
        ));
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let mut bytes = write_las(&cloud3(), 0, [0.01; 3], [0.0; 3]).unwrap();
        bytes[139..147].copy_from_slice(&0.0f64.to_le_bytes());
        assert!(matches!(
            parse_las_header(&bytes),
            Err(LasError::NonPositiveScale { axis: 'y', .. })
        ));
    }

    // A tile-sized header (point count in the tens of millions) must parse
    // from the 227 header bytes alone; no record payload is required.
    #[test]
    fn large_tile_header_parses() {
        let empty = PointCloud::from_coords(vec![], vec![], vec![]).unwrap();
        let mut bytes = write_las(&empty, 1, [0.001; 3], [0.0; 3]).unwrap();
        bytes[107..111].copy_from_slice(&18_000_000u32.to_le_bytes());
        let header = parse_las_header(&bytes).unwrap();
        assert_eq!(header.point_count, 18_000_000);
    }

    #[test]
    fn dequantization_formula() {
        // raw 0 at scale 0.01, offset 100 -> exactly 100.
        let cloud = PointCloud::from_coords(vec![100.0], vec![100.0], vec![100.0]).unwrap();
        let bytes = write_las(&cloud, 0, [0.01; 3], [100.0; 3]).unwrap();
        let (_, back) = read_las(&bytes).unwrap();
        assert_eq!(back.point(0), [100.0, 100.0, 100.0]);

        // raw 12345 at scale 0.001, offset -5 -> 7.345 (up to one rounding ulp).
        let raw = 12345i32;
        let x = raw as f64 * 0.001 + (-5.0);
        assert!((x - 7.345).abs() < 1e-12);
        let cloud = PointCloud::from_coords(vec![x], vec![0.0], vec![0.0]).unwrap();
        let bytes = write_las(&cloud, 0, [0.001; 3], [-5.0, 0.0, 0.0]).unwrap();
        assert_eq!(i32_at(&bytes[HEADER_SIZE as usize..], 0), raw);
        let (_, back) = read_las(&bytes).unwrap();
        assert_eq!(back.point(0)[0], x);
    }

    #[test]
    fn round_trip_preserves_raw_records_and_attributes() {
        for format in [0u8, 1, 2, 3] {
            let bytes = write_las(&cloud3(), format, [0.001; 3], [0.0; 3]).unwrap();
            let (header, cloud) = read_las(&bytes).unwrap();
            let again = write_las(&cloud, format, header.scale, header.offset).unwrap();
            assert_eq!(bytes, again, "byte-exact round trip for format {format}");
            assert_eq!(cloud.intensity(), Some(&[100u16, 200, 300][..]));
            assert_eq!(cloud.classification(), Some(&[2u8, 3, 4][..]));
            if format == 2 || format == 3 {
                assert_eq!(cloud.rgb().unwrap()[2], vec![7, 8, 9]);
            } else {
                assert!(cloud.rgb().is_none());
            }
        }
    }

    #[test]
    fn quantization_error_is_bounded_by_half_step() {
        let cloud = cloud3();
        let scale = [0.01; 3];
        let bytes = write_las(&cloud, 0, scale, [0.0; 3]).unwrap();
        let (_, back) = read_las(&bytes).unwrap();
        for i in 0..cloud.len() {
            for d in 0..3 {
                // brute-force check of the rounding bound per axis
                let err = (cloud.point(i)[d] - back.point(i)[d]).abs();
                assert!(err <= 0.005 + 1e-12, "err {err} at point {i} dim {d}");
            }
        }
    }

    #[test]
    fn empty_cloud_writes_header_only() {
        let empty = PointCloud::from_coords(vec![], vec![], vec![]).unwrap();
        let bytes = write_las(&empty, 0, [0.01; 3], [0.0; 3]).unwrap();
        assert_eq!(bytes.len(), HEADER_SIZE as usize);
        let (header, cloud) = read_las(&bytes).unwrap();
        assert_eq!(header.point_count, 0);
        assert!(cloud.is_empty());
    }

    #[test]
    fn quantization_overflow_is_caught() {
        let cloud = PointCloud::from_coords(vec![1e9], vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            write_las(&cloud, 0, [1e-3; 3], [0.0; 3]),
            Err(LasError::QuantizationOverflow { axis: 'x', .. })
        ));
    }

    #[test]
    fn truncated_point_data_reports_position() {
        let bytes = write_las(&cloud3(), 0, [0.01; 3], [0.0; 3]).unwrap();
        let cut = HEADER_SIZE as usize + 2 * 20 + 7; // mid third record
        match read_las(&bytes[..cut]) {
            Err(LasError::TruncatedPoints {
                records_read,
                expected,
            }) => {
                assert_eq!(records_read, 2);
                assert_eq!(expected, 3);
            }
            other => panic!("expected TruncatedPoints, got {other:?}"),
        }
    }

    proptest! {
        // Identity on clouds whose coordinates are exact grid multiples,
        // within georeferencing ranges where the grid is representable.
        #[test]
        fn round_trip_is_identity_on_grid_clouds(
            raws in proptest::collection::vec((-10_000_000i32..10_000_000, -10_000_000i32..10_000_000, -10_000_000i32..10_000_000), 1..50),
            scale_exp in 0u32..4,
            offset in -1_000_000.0f64..1_000_000.0,
        ) {
            let s = [1.0, 0.1, 0.01, 0.001][scale_exp as usize];
            let xs: Vec<f64> = raws.iter().map(|r| r.0 as f64 * s + offset).collect();
            let ys: Vec<f64> = raws.iter().map(|r| r.1 as f64 * s + offset).collect();
            let zs: Vec<f64> = raws.iter().map(|r| r.2 as f64 * s + offset).collect();
            let cloud = PointCloud::from_coords(xs, ys, zs).unwrap();
            let bytes = write_las(&cloud, 0, [s; 3], [offset; 3]).unwrap();
            let (_, back) = read_las(&bytes).unwrap();
            prop_assert_eq!(cloud.xs(), back.xs());
            prop_assert_eq!(cloud.ys(), back.ys());
            prop_assert_eq!(cloud.zs(), back.zs());
        }

        // De-quantization is strictly monotone in the raw value.
        #[test]
        fn dequantization_monotone(
            raw1 in -2_000_000_000i32..2_000_000_000,
            step in 1i32..1000,
            scale_exp in 0u32..4,
            offset in -1_000_000.0f64..1_000_000.0,
        ) {
            let s = [1.0, 0.1, 0.01, 0.001][scale_exp as usize];
            let raw2 = raw1.saturating_add(step);
            prop_assume!(raw1 < raw2);
            let c1 = raw1 as f64 * s + offset;
            let c2 = raw2 as f64 * s + offset;
            prop_assert!(c1 < c2);
        }
    }
}
