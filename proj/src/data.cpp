#include "dmamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dmamba/binio.hpp"

namespace dmamba {

std::array<int64_t, 2> EEGDataset::class_counts() const {
    std::array<int64_t, 2> counts{0, 0};
    for (uint8_t l : labels) counts[l == 0 ? 0 : 1]++;
    return counts;
}

int64_t default_fir_taps(int64_t sample_rate) {
    int64_t taps = (401 * sample_rate) / 1000;
    if (taps % 2 == 0) ++taps;
    return std::max<int64_t>(taps, 11);
}

namespace {

// Unity-DC-gain Hamming-windowed sinc low-pass.
std::vector<double> lowpass_kernel(double cutoff_hz, double sample_rate, int64_t taps) {
    const int64_t m = taps / 2;
    const double fc = cutoff_hz / sample_rate;  // cycles per sample
    std::vector<double> h(static_cast<size_t>(taps));
    double sum = 0.0;
    for (int64_t i = 0; i < taps; ++i) {
        const double k = static_cast<double>(i - m);
        const double sinc = k == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * k) /
                                                      (std::numbers::pi * k);
        const double window =
            0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(taps - 1));
        h[static_cast<size_t>(i)] = sinc * window;
        sum += h[static_cast<size_t>(i)];
    }
    for (double& v : h) v /= sum;
    return h;
}

}  // namespace

std::vector<double> design_bandpass_fir(double sample_rate, double low_hz, double high_hz,
                                        int64_t taps) {
    if (taps < 3 || taps % 2 == 0) throw ValueError("band-pass taps must be odd and >= 3");
    if (low_hz <= 0.0 || high_hz <= low_hz) throw ValueError("band edges must satisfy 0 < low < high");
    if (high_hz >= sample_rate / 2.0) {
        throw ValueError("band-pass upper edge " + std::to_string(high_hz) +
                         " Hz reaches Nyquist at " + std::to_string(sample_rate / 2.0) + " Hz");
    }
    const auto wide = lowpass_kernel(high_hz, sample_rate, taps);
    const auto narrow = lowpass_kernel(low_hz, sample_rate, taps);
    std::vector<double> h(static_cast<size_t>(taps));
    for (size_t i = 0; i < h.size(); ++i) h[i] = wide[i] - narrow[i];
    return h;
}

namespace {

// "Same" convolution of a pre-padded signal: output index i consumes
// padded[i .. i+taps-1].
std::vector<double> conv_valid(std::span<const double> padded, std::span<const double> kernel) {
    const size_t out_len = padded.size() - kernel.size() + 1;
    std::vector<double> out(out_len, 0.0);
    for (size_t i = 0; i < out_len; ++i) {
        double acc = 0.0;
        for (size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * padded[i + k];
        out[i] = acc;
    }
    return out;
}

std::vector<double> reflect_pad_odd(std::span<const double> x, size_t pad) {
    std::vector<double> out;
    out.reserve(x.size() + 2 * pad);
    for (size_t i = 0; i < pad; ++i) out.push_back(2.0 * x.front() - x[pad - i]);
    out.insert(out.end(), x.begin(), x.end());
    const size_t n = x.size();
    for (size_t i = 0; i < pad; ++i) out.push_back(2.0 * x.back() - x[n - 2 - i]);
    return out;
}

}  // namespace

namespace {

// One zero-lag pass: odd-reflect pad by a full kernel length, "valid"
// convolution, trim back to the input length. For padded index p = j + taps
// the kernel's center tap (taps-1)/2 sits over x[j] when the valid-output
// index is j + (taps+1)/2.
std::vector<double> filter_pass(std::span<const double> kernel, std::span<const double> x) {
    const size_t taps = kernel.size();
    auto padded = reflect_pad_odd(x, taps);
    auto full = conv_valid(padded, kernel);
    const size_t lead = (taps + 1) / 2;
    return std::vector<double>(full.begin() + static_cast<std::ptrdiff_t>(lead),
                               full.begin() + static_cast<std::ptrdiff_t>(lead + x.size()));
}

}  // namespace

std::vector<double> filtfilt(std::span<const double> kernel, std::span<const double> x) {
    if (x.size() < kernel.size() + 2) {
        throw ValueError("filtfilt: signal shorter than the filter kernel");
    }
    auto fwd = filter_pass(kernel, x);
    std::reverse(fwd.begin(), fwd.end());
    auto bwd = filter_pass(kernel, fwd);
    std::reverse(bwd.begin(), bwd.end());
    return bwd;
}

ContinuousRecording bandpass_filter(const ContinuousRecording& r, double low_hz, double high_hz) {
    if (high_hz >= static_cast<double>(r.sample_rate) / 2.0) {
        throw ValueError("band-pass upper edge exceeds Nyquist for rate " +
                         std::to_string(r.sample_rate));
    }
    const auto kernel =
        design_bandpass_fir(static_cast<double>(r.sample_rate), low_hz, high_hz,
                            default_fir_taps(r.sample_rate));
    const int64_t channels = r.samples.extent(0), total = r.samples.extent(1);
    ContinuousRecording out;
    out.sample_rate = r.sample_rate;
    out.channel_names = r.channel_names;
    out.samples = Tensor(Shape{channels, total});
    for (int64_t c = 0; c < channels; ++c) {
        std::span<const double> row(r.samples.data().data() + c * total, static_cast<size_t>(total));
        auto filtered = filtfilt(kernel, row);
        std::copy(filtered.begin(), filtered.end(), out.samples.data().begin() + c * total);
    }
    return out;
}

ContinuousRecording downsample(const ContinuousRecording& r, int64_t factor) {
    if (factor < 1 || r.sample_rate % factor != 0) {
        throw ValueError("downsample: factor " + std::to_string(factor) +
                         " does not divide rate " + std::to_string(r.sample_rate));
    }
    const int64_t channels = r.samples.extent(0), total = r.samples.extent(1);
    const int64_t out_len = (total + factor - 1) / factor;
    ContinuousRecording out;
    out.sample_rate = r.sample_rate / factor;
    out.channel_names = r.channel_names;
    out.samples = Tensor(Shape{channels, out_len});
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < out_len; ++i)
            out.samples.data()[static_cast<size_t>(c * out_len + i)] =
                r.samples.data()[static_cast<size_t>(c * total + i * factor)];
    return out;
}

EEGDataset epoch_segment(const ContinuousRecording& r, double epoch_seconds) {
    if (r.sample_rate != kEpochRate) {
        throw ValueError("epoch_segment expects a " + std::to_string(kEpochRate) +
                         " Hz recording, got " + std::to_string(r.sample_rate) + " Hz");
    }
    if (r.samples.extent(0) != kEEGChannels) {
        throw ShapeError("epoch_segment expects " + std::to_string(kEEGChannels) + " channels");
    }
    const int64_t window = static_cast<int64_t>(std::llround(epoch_seconds * kEpochRate));
    if (window != kEpochSamples) {
        throw ValueError("epoch length must cover " + std::to_string(kEpochSamples) + " samples");
    }
    const int64_t total = r.samples.extent(1);
    if (total < window) throw ValueError("recording shorter than one epoch");
    const int64_t n = total / window;  // trailing partial window dropped
    EEGDataset d;
    d.epochs = Tensor(Shape{n, kEEGChannels, kEpochSamples, 1});
    d.labels.assign(static_cast<size_t>(n), 0);
    for (int64_t e = 0; e < n; ++e)
        for (int64_t c = 0; c < kEEGChannels; ++c)
            for (int64_t t = 0; t < window; ++t)
                d.epochs.data()[static_cast<size_t>(((e * kEEGChannels + c) * kEpochSamples + t))] =
                    r.samples.data()[static_cast<size_t>(c * total + e * window + t)];
    return d;
}

DrowsinessLabel perclos_label(double perclos) {
    if (perclos < 0.0 || perclos > 1.0) {
        throw ValueError("PERCLOS value " + std::to_string(perclos) + " outside [0, 1]");
    }
    return perclos >= 0.5 ? DrowsinessLabel::drowsy : DrowsinessLabel::awake;
}

namespace {

// Largest-remainder apportionment of n items to the given fractions.
std::vector<int64_t> apportion(int64_t n, std::span<const double> fractions) {
    std::vector<int64_t> base(fractions.size());
    std::vector<std::pair<double, size_t>> remainders;
    int64_t assigned = 0;
    for (size_t i = 0; i < fractions.size(); ++i) {
        const double quota = static_cast<double>(n) * fractions[i];
        base[i] = static_cast<int64_t>(std::floor(quota));
        assigned += base[i];
        remainders.push_back({quota - std::floor(quota), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int64_t i = 0; i < n - assigned; ++i) base[remainders[static_cast<size_t>(i) % remainders.size()].second]++;
    return base;
}

std::array<std::vector<int64_t>, 2> shuffled_class_indices(const EEGDataset& d, Rng& rng) {
    std::array<std::vector<int64_t>, 2> by_class;
    for (int64_t i = 0; i < d.size(); ++i) by_class[d.labels[static_cast<size_t>(i)] == 0 ? 0 : 1].push_back(i);
    rng.shuffle(by_class[0]);
    rng.shuffle(by_class[1]);
    return by_class;
}

}  // namespace

DatasetSplit split_dataset(const EEGDataset& d, const SplitSpec& spec) {
    if (d.size() < 10) throw ValueError("split_dataset requires at least 10 samples");
    const double fsum = spec.train_frac + spec.val_frac + spec.test_frac;
    if (std::fabs(fsum - 1.0) > 1e-9) throw ValueError("split fractions must sum to 1");
    Rng rng(spec.seed);
    DatasetSplit split;
    const double fractions[3] = {spec.train_frac, spec.val_frac, spec.test_frac};

    if (!spec.stratified) {
        std::vector<int64_t> idx(static_cast<size_t>(d.size()));
        for (int64_t i = 0; i < d.size(); ++i) idx[static_cast<size_t>(i)] = i;
        rng.shuffle(idx);
        const auto counts = apportion(d.size(), fractions);
        auto it = idx.begin();
        split.train.assign(it, it + counts[0]);
        it += counts[0];
        split.val.assign(it, it + counts[1]);
        it += counts[1];
        split.test.assign(it, it + counts[2]);
        return split;
    }

    auto by_class = shuffled_class_indices(d, rng);
    for (const auto& cls : by_class) {
        if (!cls.empty() && cls.size() < 3) {
            throw ValueError("a class has fewer samples than splits");
        }
        const auto counts = apportion(static_cast<int64_t>(cls.size()), fractions);
        auto it = cls.begin();
        split.train.insert(split.train.end(), it, it + counts[0]);
        it += counts[0];
        split.val.insert(split.val.end(), it, it + counts[1]);
        it += counts[1];
        split.test.insert(split.test.end(), it, it + counts[2]);
    }
    return split;
}

std::vector<std::pair<std::vector<int64_t>, std::vector<int64_t>>> stratified_kfold(
    const EEGDataset& d, int64_t k, uint64_t seed) {
    if (k < 2) throw ValueError("stratified_kfold requires k >= 2");
    const auto counts = d.class_counts();
    for (int64_t c : counts) {
        if (c > 0 && c < k) {
            throw ValueError("a class has " + std::to_string(c) + " samples, fewer than " +
                             std::to_string(k) + " folds");
        }
    }
    Rng rng(seed);
    auto by_class = shuffled_class_indices(d, rng);
    std::vector<std::vector<int64_t>> folds(static_cast<size_t>(k));
    for (const auto& cls : by_class) {
        for (size_t i = 0; i < cls.size(); ++i)
            folds[i % static_cast<size_t>(k)].push_back(cls[i]);
    }
    std::vector<std::pair<std::vector<int64_t>, std::vector<int64_t>>> out;
    for (int64_t f = 0; f < k; ++f) {
        std::pair<std::vector<int64_t>, std::vector<int64_t>> fold;
        fold.second = folds[static_cast<size_t>(f)];
        for (int64_t g = 0; g < k; ++g) {
            if (g == f) continue;
            fold.first.insert(fold.first.end(), folds[static_cast<size_t>(g)].begin(), folds[static_cast<size_t>(g)].end());
        }
        out.push_back(std::move(fold));
    }
    return out;
}

EEGDataset synth_generate(int64_t n, uint64_t seed, double snr) {
    if (n < 2 || n % 2 != 0) throw ValueError("synth_generate requires an even n >= 2");
    if (snr <= 0.0) throw ValueError("synth_generate requires snr > 0");
    Rng rng(seed);
    EEGDataset d;
    d.provenance = Provenance::synthetic;
    d.epochs = Tensor(Shape{n, kEEGChannels, kEpochSamples, 1});
    d.labels.assign(static_cast<size_t>(n), 0);
    for (int64_t e = n / 2; e < n; ++e) d.labels[static_cast<size_t>(e)] = 1;

    const double fs = static_cast<double>(kEpochRate);
    std::vector<double> freqs, amps;
    std::vector<double> epoch(static_cast<size_t>(kEEGChannels * kEpochSamples));
    for (int64_t e = 0; e < n; ++e) {
        const bool drowsy = d.labels[static_cast<size_t>(e)] != 0;
        freqs.clear();
        amps.clear();
        const double leak = rng.uniform(0.0, 0.4);
        if (drowsy) {
            // Dominant theta + alpha, weak beta leak.
            freqs.push_back(rng.uniform(5.0, 7.0));
            freqs.push_back(rng.uniform(5.0, 7.0));
            freqs.push_back(rng.uniform(9.0, 11.0));
            freqs.push_back(rng.uniform(9.0, 11.0));
            for (int i = 0; i < 4; ++i) amps.push_back(rng.uniform(0.7, 1.3));
            freqs.push_back(rng.uniform(18.0, 25.0));
            freqs.push_back(rng.uniform(18.0, 25.0));
            for (int i = 0; i < 2; ++i) amps.push_back(leak * rng.uniform(0.7, 1.3));
        } else {
            // Dominant beta, weak theta/alpha leak.
            for (int i = 0; i < 3; ++i) freqs.push_back(rng.uniform(18.0, 25.0));
            for (int i = 0; i < 3; ++i) amps.push_back(rng.uniform(0.7, 1.3));
            freqs.push_back(rng.uniform(5.0, 7.0));
            freqs.push_back(rng.uniform(9.0, 11.0));
            for (int i = 0; i < 2; ++i) amps.push_back(leak * rng.uniform(0.7, 1.3));
        }

        double power = 0.0;
        for (int64_t c = 0; c < kEEGChannels; ++c) {
            const double gain = rng.uniform(0.5, 1.5);
            for (size_t k = 0; k < freqs.size(); ++k) {
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double w = 2.0 * std::numbers::pi * freqs[k] / fs;
                for (int64_t t = 0; t < kEpochSamples; ++t) {
                    epoch[static_cast<size_t>(c * kEpochSamples + t)] +=
                        gain * amps[k] * std::sin(w * static_cast<double>(t) + phase);
                }
            }
        }
        for (double v : epoch) power += v * v;
        power /= static_cast<double>(epoch.size());
        const double noise_std = std::sqrt(power / snr);
        for (size_t i = 0; i < epoch.size(); ++i) {
            const double value = epoch[i] + noise_std * rng.normal();
            // Quantize to float32: the stored format is float32 and the
            // save/load round trip must be bitwise.
            d.epochs.data()[static_cast<size_t>(e) * epoch.size() + i] =
                static_cast<double>(static_cast<float>(value));
            epoch[i] = 0.0;
        }
    }
    return d;
}

EEGDataset subset(const EEGDataset& d, std::span<const int64_t> indices) {
    EEGDataset out;
    out.provenance = d.provenance;
    const int64_t stride = kEEGChannels * kEpochSamples;
    out.epochs = Tensor(Shape{static_cast<int64_t>(indices.size()), kEEGChannels, kEpochSamples, 1});
    out.labels.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        if (src < 0 || src >= d.size()) throw ValueError("subset index out of range");
        std::copy_n(d.epochs.data().begin() + src * stride, stride,
                    out.epochs.data().begin() + static_cast<int64_t>(i) * stride);
        out.labels[i] = d.labels[static_cast<size_t>(src)];
    }
    return out;
}

Tensor gather_batch(const EEGDataset& d, std::span<const int64_t> indices) {
    const int64_t stride = kEEGChannels * kEpochSamples;
    Tensor batch(Shape{static_cast<int64_t>(indices.size()), kEEGChannels, kEpochSamples, 1});
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        if (src < 0 || src >= d.size()) throw ValueError("batch index out of range");
        std::copy_n(d.epochs.data().begin() + src * stride, stride,
                    batch.data().begin() + static_cast<int64_t>(i) * stride);
    }
    return batch;
}

namespace {
constexpr char kDatasetMagic[4] = {'D', 'M', 'E', 'G'};
constexpr uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const EEGDataset& d, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    binio::write_magic(os, kDatasetMagic);
    binio::write_u32(os, kDatasetVersion);
    os.put(static_cast<char>(d.provenance));
    binio::write_u64(os, static_cast<uint64_t>(d.size()));
    binio::write_u32(os, static_cast<uint32_t>(kEEGChannels));
    binio::write_u32(os, static_cast<uint32_t>(kEpochSamples));
    for (double v : d.epochs.data()) binio::write_f32(os, static_cast<float>(v));
    for (uint8_t l : d.labels) os.put(static_cast<char>(l));
    if (!os) throw IoError("write failed for " + path.string());
}

EEGDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    binio::expect_magic(is, kDatasetMagic, "dataset");
    const uint32_t version = binio::read_u32(is, "dataset version");
    if (version != kDatasetVersion) {
        throw FormatError("unsupported dataset version " + std::to_string(version));
    }
    const int prov = is.get();
    if (prov == EOF) throw TruncationError("file truncated while reading provenance");
    const uint64_t n = binio::read_u64(is, "epoch count");
    const uint32_t channels = binio::read_u32(is, "channel count");
    const uint32_t samples = binio::read_u32(is, "sample count");
    if (channels != kEEGChannels || samples != kEpochSamples) {
        throw ExtentError("dataset stores " + std::to_string(channels) + "x" +
                          std::to_string(samples) + " epochs, expected " +
                          std::to_string(kEEGChannels) + "x" + std::to_string(kEpochSamples));
    }
    if (n == 0) throw FormatError("dataset contains no epochs");
    EEGDataset d;
    d.provenance = prov == 0 ? Provenance::real : Provenance::synthetic;
    d.epochs = Tensor(Shape{static_cast<int64_t>(n), kEEGChannels, kEpochSamples, 1});
    for (double& v : d.epochs.data())
        v = static_cast<double>(binio::read_f32(is, "epoch payload"));
    d.labels.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        const int b = is.get();
        if (b == EOF) throw TruncationError("file truncated while reading labels");
        if (b != 0 && b != 1) throw FormatError("label byte must be 0 or 1");
        d.labels[i] = static_cast<uint8_t>(b);
    }
    return d;
}

double band_power(std::span<const double> x, double sample_rate, double low_hz, double high_hz) {
    const double n = static_cast<double>(x.size());
    const double bin_width = sample_rate / n;
    const int64_t k_lo = static_cast<int64_t>(std::ceil(low_hz / bin_width - 1e-9));
    const int64_t k_hi = static_cast<int64_t>(std::floor(high_hz / bin_width + 1e-9));
    double power = 0.0;
    for (int64_t k = std::max<int64_t>(k_lo, 1); k <= k_hi; ++k) {
        double re = 0.0, im = 0.0;
        const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / n;
        for (size_t t = 0; t < x.size(); ++t) {
            re += x[t] * std::cos(w * static_cast<double>(t));
            im -= x[t] * std::sin(w * static_cast<double>(t));
        }
        power += 2.0 * (re * re + im * im) / (n * n);
    }
    return power;
}

double epoch_band_power(const EEGDataset& d, int64_t epoch_index, double low_hz, double high_hz) {
    const int64_t stride = kEEGChannels * kEpochSamples;
    double total = 0.0;
    for (int64_t c = 0; c < kEEGChannels; ++c) {
        std::span<const double> row(
            d.epochs.data().data() + epoch_index * stride + c * kEpochSamples,
            static_cast<size_t>(kEpochSamples));
        total += band_power(row, static_cast<double>(kEpochRate), low_hz, high_hz);
    }
    return total / static_cast<double>(kEEGChannels);
}

namespace {
constexpr char kRawMagic[4] = {'D', 'M', 'R', 'W'};
constexpr uint32_t kRawVersion = 1;
}  // namespace

ContinuousRecording load_raw_recording(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    binio::expect_magic(is, kRawMagic, "raw recording");
    const uint32_t version = binio::read_u32(is, "raw version");
    if (version != kRawVersion) throw FormatError("unsupported raw version");
    const uint32_t channels = binio::read_u32(is, "raw channel count");
    const uint32_t rate = binio::read_u32(is, "raw sample rate");
    const uint64_t total = binio::read_u64(is, "raw length");
    if (channels == 0 || total == 0) throw FormatError("raw recording is empty");
    ContinuousRecording r;
    r.sample_rate = rate;
    r.samples = Tensor(Shape{static_cast<int64_t>(channels), static_cast<int64_t>(total)});
    for (double& v : r.samples.data())
        v = static_cast<double>(binio::read_f32(is, "raw payload"));
    return r;
}

void save_raw_recording(const ContinuousRecording& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    binio::write_magic(os, kRawMagic);
    binio::write_u32(os, kRawVersion);
    binio::write_u32(os, static_cast<uint32_t>(r.samples.extent(0)));
    binio::write_u32(os, static_cast<uint32_t>(r.sample_rate));
    binio::write_u64(os, static_cast<uint64_t>(r.samples.extent(1)));
    for (double v : r.samples.data()) binio::write_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed for " + path.string());
}

std::vector<double> load_perclos_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<double> values;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            values.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw FormatError("PERCLOS file line is not a number: '" + line + "'");
        }
    }
    return values;
}

EEGDataset preprocess_recording(const ContinuousRecording& r,
                                std::span<const double> perclos_per_epoch) {
    if (r.samples.extent(0) != kEEGChannels) {
        throw ShapeError("recording has " + std::to_string(r.samples.extent(0)) +
                         " channels, expected " + std::to_string(kEEGChannels));
    }
    if (r.sample_rate % kEpochRate != 0) {
        throw ValueError("sample rate " + std::to_string(r.sample_rate) +
                         " is not a multiple of " + std::to_string(kEpochRate));
    }
    ContinuousRecording filtered = bandpass_filter(r, 1.0, 75.0);
    ContinuousRecording at200 = r.sample_rate == kEpochRate
                                    ? std::move(filtered)
                                    : downsample(filtered, r.sample_rate / kEpochRate);
    EEGDataset d = epoch_segment(at200);
    if (static_cast<int64_t>(perclos_per_epoch.size()) != d.size()) {
        throw FormatError("PERCLOS count " + std::to_string(perclos_per_epoch.size()) +
                          " does not match epoch count " + std::to_string(d.size()));
    }
    for (int64_t e = 0; e < d.size(); ++e)
        d.labels[static_cast<size_t>(e)] = static_cast<uint8_t>(perclos_label(perclos_per_epoch[static_cast<size_t>(e)]));
    return d;
}

}  // namespace dmamba
