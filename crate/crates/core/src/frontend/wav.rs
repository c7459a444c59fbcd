use std::io::Read;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

/// Decodes PCM WAV (8/16/24/32-bit integer or 32-bit float), averaging
/// channels to mono. Integer samples are scaled by `2^(bits-1)`.
pub fn read_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("WAV declares zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Format(format!("unsupported WAV encoding: {fmt:?} {bits}-bit")));
        }
    };
    let samples: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&v| v as f64).sum::<f64>() as f32 / channels as f32)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Writes a mono 16-bit PCM file, clipping to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn encode(spec: WavSpec, samples: &[i32]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut buf, spec).unwrap();
        for &s in samples {
            match spec.bits_per_sample {
                8 => w.write_sample(s as i8).unwrap(),
                16 => w.write_sample(s as i16).unwrap(),
                _ => w.write_sample(s).unwrap(),
            }
        }
        w.finalize().unwrap();
        buf.into_inner()
    }

    fn int_spec(channels: u16, bits: u16) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        }
    }

    #[test]
    fn sixteen_bit_scaling() {
        let clip = read_wav(Cursor::new(encode(int_spec(1, 16), &[32767, -32768, 0]))).unwrap();
        assert_eq!(clip.samples, vec![32767.0 / 32768.0, -1.0, 0.0]);
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = read_wav(Cursor::new(encode(int_spec(2, 16), &[16384, -16384, 8192, 8192]))).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.25]);
    }

    #[test]
    fn other_bit_depths() {
        let c8 = read_wav(Cursor::new(encode(int_spec(1, 8), &[64, -128]))).unwrap();
        assert_eq!(c8.samples, vec![0.5, -1.0]);
        let c24 = read_wav(Cursor::new(encode(int_spec(1, 24), &[1 << 22]))).unwrap();
        assert_eq!(c24.samples, vec![0.5]);
        let spec = WavSpec {
            sample_format: SampleFormat::Float,
            bits_per_sample: 32,
            ..int_spec(1, 32)
        };
        let mut buf = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut buf, spec).unwrap();
        w.write_sample(0.125f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(Cursor::new(buf.into_inner())).unwrap().samples, vec![0.125]);
    }

    #[test]
    fn one_second_has_sample_rate_samples() {
        let data = encode(int_spec(1, 16), &vec![0; 16_000]);
        assert_eq!(read_wav(Cursor::new(data)).unwrap().samples.len(), 16_000);
    }

    #[test]
    fn malformed_header_is_format_error() {
        let err = read_wav(Cursor::new(b"RIFF\x10\0\0\0WAVEjunkjunk".to_vec())).unwrap_err();
        assert!(matches!(err, Error::Format(_) | Error::Io { .. }), "{err:?}");
        assert!(matches!(read_wav(Cursor::new(b"not a wav".to_vec())), Err(Error::Format(_))));
    }
}
