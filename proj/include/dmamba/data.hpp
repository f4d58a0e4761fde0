#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dmamba/rng.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// EEG preprocessing and dataset handling. The pipeline mirrors the standard
// vigilance protocol: band-pass 1-75 Hz at the native rate, downsample to
// 200 Hz, cut non-overlapping one-second epochs of shape (17, 200, 1), label
// with thresholded PERCLOS.

struct ContinuousRecording {
    Tensor samples;  // [channels, T]
    int64_t sample_rate = 0;
    std::vector<std::string> channel_names;
};

enum class Provenance : uint8_t { real = 0, synthetic = 1 };

inline constexpr int64_t kEEGChannels = 17;
inline constexpr int64_t kEpochSamples = 200;
inline constexpr int64_t kEpochRate = 200;

struct EEGDataset {
    Tensor epochs;  // [n, 17, 200, 1]
    std::vector<uint8_t> labels;  // 0 awake, 1 drowsy
    Provenance provenance = Provenance::real;

    int64_t size() const { return epochs.defined() ? epochs.extent(0) : 0; }
    std::array<int64_t, 2> class_counts() const;
};

// Windowed-sinc band-pass, built as the difference of two unity-DC-gain
// Hamming low-passes so the DC response is exactly zero. Odd tap count.
std::vector<double> design_bandpass_fir(double sample_rate, double low_hz, double high_hz,
                                        int64_t taps);

// Zero-phase filtering: odd-reflection padding by one kernel length, one
// forward and one backward pass. Output has the input's length.
std::vector<double> filtfilt(std::span<const double> kernel, std::span<const double> x);

// Default tap rule: 401 taps at 1000 Hz, scaled proportionally (odd).
int64_t default_fir_taps(int64_t sample_rate);

ContinuousRecording bandpass_filter(const ContinuousRecording& r, double low_hz = 1.0,
                                    double high_hz = 75.0);

// Keeps every factor-th sample; requires the rate to divide evenly.
ContinuousRecording downsample(const ContinuousRecording& r, int64_t factor = 5);

// Non-overlapping one-second windows at 200 Hz; the trailing partial window
// is dropped. Labels are zero-initialized (unlabeled).
EEGDataset epoch_segment(const ContinuousRecording& r, double epoch_seconds = 1.0);

enum class DrowsinessLabel : uint8_t { awake = 0, drowsy = 1 };

// PERCLOS in [0,1]; the 0.5 boundary maps to drowsy.
DrowsinessLabel perclos_label(double perclos);

struct SplitSpec {
    double train_frac = 0.70;
    double val_frac = 0.15;
    double test_frac = 0.15;
    bool stratified = true;
    uint64_t seed = 0;
};

struct DatasetSplit {
    std::vector<int64_t> train, val, test;
};

// Deterministic stratified split; per-class counts follow largest-remainder
// rounding so every class proportion is within one sample of its quota.
DatasetSplit split_dataset(const EEGDataset& d, const SplitSpec& spec);

// k folds, class proportions within +-1 per fold, each sample in exactly one
// test fold. Returns (train_indices, test_indices) per fold.
std::vector<std::pair<std::vector<int64_t>, std::vector<int64_t>>> stratified_kfold(
    const EEGDataset& d, int64_t k, uint64_t seed);

// Synthetic vigilance data: awake epochs carry beta-band (18-25 Hz)
// sinusoids, drowsy epochs theta (5-7 Hz) plus alpha (9-11 Hz), with random
// phases per channel, a weak leak of the opposite band, and white noise at
// the given linear signal-to-noise power ratio. Values are quantized to
// float32 so the on-disk round trip is bitwise exact.
EEGDataset synth_generate(int64_t n, uint64_t seed, double snr);

EEGDataset subset(const EEGDataset& d, std::span<const int64_t> indices);

// Rows of the dataset as a model input batch [len(indices), 17, 200, 1].
Tensor gather_batch(const EEGDataset& d, std::span<const int64_t> indices);

void save_dataset(const EEGDataset& d, const std::filesystem::path& path);
EEGDataset load_dataset(const std::filesystem::path& path);

// Relative power in [low_hz, high_hz] over integer-Hz DFT bins.
double band_power(std::span<const double> x, double sample_rate, double low_hz, double high_hz);

// Mean over channels of an epoch's band power; epoch_index into d.epochs.
double epoch_band_power(const EEGDataset& d, int64_t epoch_index, double low_hz, double high_hz);

// Raw-recording interchange for user-supplied data: float32 channel-major
// samples with a fixed header (see README). PERCLOS files are plain text,
// one value per resulting epoch.
ContinuousRecording load_raw_recording(const std::filesystem::path& path);
void save_raw_recording(const ContinuousRecording& r, const std::filesystem::path& path);
std::vector<double> load_perclos_file(const std::filesystem::path& path);

// Full ingestion: band-pass, downsample to 200 Hz, epoch, label. The PERCLOS
// array must have one value per resulting epoch.
EEGDataset preprocess_recording(const ContinuousRecording& r,
                                std::span<const double> perclos_per_epoch);

}  // namespace dmamba
