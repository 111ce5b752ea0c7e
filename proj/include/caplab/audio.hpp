#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caplab/tensor.hpp"

namespace caplab {

struct Waveform {
    std::vector<float> samples;  // in [-1, 1]
    int sample_rate = 16000;
};

// Mono 16-bit PCM only.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Band-limited windowed-sinc resampling; output length = round(N * target/source).
// Equal rates are the identity; empty input stays empty.
Waveform resample(const Waveform& w, int target_rate);

inline constexpr int kMelWindow = 400;   // 25 ms at 16 kHz
inline constexpr int kMelHop = 160;      // 10 ms
inline constexpr int kMelFft = 512;
inline constexpr int kMelBands = 80;
inline constexpr int kMelRate = 16000;
inline constexpr double kMelFloor = 1e-10;

// floor((n - 400)/160) + 1; requires n >= 400.
int64_t mel_frame_count(int64_t n_samples);

// Pre-log filterbank energies, [T x 80] row-major. Exposed so scaling and
// filter-shape properties can be asserted on the exact values the log sees.
std::vector<double> mel_energies(const Waveform& w);

// Natural-log mel features, floor 1e-10: [T x 80].
Tensor log_mel(const Waveform& w);

// Triangular HTK-mel filter weights over the 257 FFT bins, [80][257].
std::vector<std::vector<double>> mel_filter_bank();

// Center frequency (Hz) of each of the 80 bands.
std::vector<double> mel_band_centers_hz();

}  // namespace caplab
