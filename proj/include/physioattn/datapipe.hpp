#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <cstdio>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "physioattn/task.hpp"

namespace physioattn {

inline constexpr std::size_t kSegmentLength = 2000;  // 20 s at 100 Hz
inline constexpr std::size_t kChannels = 2;          // ECG, PPG
inline constexpr double kSampleRate = 100.0;
inline constexpr std::size_t kDemographics = 4;      // age, sex, height, weight

struct SampleRecord {
  std::uint32_t case_id = 0;
  std::vector<float> ecg;  // mV
  std::vector<float> ppg;  // unitless
  float age = 0, sex = 0, height = 0, weight = 0;
  float label = 0;  // {0,1} or SVI in mL/m^2/beat

  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  Task task = Task::classification;
  std::vector<SampleRecord> records;

  std::size_t size() const { return records.size(); }
  bool operator==(const Dataset&) const = default;

  std::vector<std::uint32_t> case_ids() const {
    std::set<std::uint32_t> s;
    for (const auto& r : records) s.insert(r.case_id);
    return {s.begin(), s.end()};
  }

  double positive_fraction() const {
    if (records.empty()) return 0.0;
    std::size_t pos = 0;
    for (const auto& r : records) pos += r.label > 0.5f;
    return static_cast<double>(pos) / static_cast<double>(records.size());
  }
};

// ---------------------------------------------------------------------------
// segment validity

struct FilterResult {
  bool keep = true;
  std::string channel;  // "ecg" or "ppg" when dropped
  std::size_t index = 0;
  float value = 0;

  std::string reason() const {
    if (keep) return {};
    return channel + " sample " + std::to_string(index) + " out of range (" + std::to_string(value) + ")";
  }
};

inline constexpr float kEcgMin = -2.0f;
inline constexpr float kEcgMax = 4.5f;

/// Drops a segment with any ECG sample outside [-2, 4.5] mV or any PPG sample <= 0.
inline FilterResult filter_segment(std::span<const float> ecg, std::span<const float> ppg) {
  if (ecg.size() != kSegmentLength || ppg.size() != kSegmentLength) {
    throw std::invalid_argument("filter_segment: segments must have " + std::to_string(kSegmentLength) +
                                " samples (ecg " + std::to_string(ecg.size()) + ", ppg " + std::to_string(ppg.size()) + ")");
  }
  for (std::size_t i = 0; i < ecg.size(); ++i) {
    if (!(ecg[i] >= kEcgMin && ecg[i] <= kEcgMax)) return {false, "ecg", i, ecg[i]};
  }
  for (std::size_t i = 0; i < ppg.size(); ++i) {
    if (!(ppg[i] > 0.0f)) return {false, "ppg", i, ppg[i]};
  }
  return {};
}

/// Start offsets of consecutive windows of `seg_len` samples taken every `stride` samples.
inline std::vector<std::size_t> segment_windows(std::size_t total, std::size_t seg_len = kSegmentLength,
                                                std::size_t stride = kSegmentLength) {
  if (seg_len == 0 || stride == 0) throw std::invalid_argument("segment_windows: length and stride must be positive");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + seg_len <= total; s += stride) starts.push_back(s);
  return starts;
}

// ---------------------------------------------------------------------------
// hypotension labels

struct MapTrace {
  std::vector<double> timestamps;  // s, strictly increasing
  std::vector<double> map_values;  // mmHg

  void validate() const {
    if (timestamps.size() != map_values.size()) throw std::invalid_argument("MapTrace: timestamps/values size mismatch");
    if (timestamps.empty()) throw std::invalid_argument("MapTrace: empty trace");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i] > timestamps[i - 1])) throw std::invalid_argument("MapTrace: timestamps must be strictly increasing");
    }
  }
};

struct HypotensionRule {
  double horizon_s = 300.0;
  double map_threshold = 65.0;  // inclusive
  double min_duration_s = 60.0; // strict
};

/// 1 if MAP stays <= 65 mmHg for more than 60 s somewhere in (end, end + 300 s].
/// The trace is a step function: each value holds until the next timestamp.
inline int label_hypotension(const MapTrace& trace, double segment_end, const HypotensionRule& rule = {}) {
  trace.validate();
  const double lo = segment_end;
  const double hi = segment_end + rule.horizon_s;
  if (trace.timestamps.front() > lo || trace.timestamps.back() < hi) {
    throw std::invalid_argument("label_hypotension: trace does not cover the prediction horizon");
  }
  double run = 0.0;
  const std::size_t n = trace.timestamps.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::max(trace.timestamps[i], lo);
    const double b = std::min(i + 1 < n ? trace.timestamps[i + 1] : hi, hi);
    if (b <= a) continue;
    if (trace.map_values[i] <= rule.map_threshold) {
      run += b - a;
      if (run > rule.min_duration_s) return 1;
    } else {
      run = 0.0;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// stroke volume index

enum class BsaFormula { du_bois, mosteller };

inline BsaFormula parse_bsa_formula(const std::string& s) {
  if (s == "du_bois" || s == "dubois") return BsaFormula::du_bois;
  if (s == "mosteller") return BsaFormula::mosteller;
  throw std::invalid_argument("unknown BSA formula '" + s + "' (expected du_bois|mosteller)");
}

/// Body surface area in m^2 from height (cm) and weight (kg).
inline double body_surface_area(double height_cm, double weight_kg, BsaFormula f = BsaFormula::du_bois) {
  if (!(height_cm > 0) || !(weight_kg > 0)) throw std::invalid_argument("body_surface_area: height and weight must be positive");
  if (f == BsaFormula::mosteller) return std::sqrt(height_cm * weight_kg / 3600.0);
  return 0.007184 * std::pow(weight_kg, 0.425) * std::pow(height_cm, 0.725);
}

struct HemoPoint {
  double co = 0;  // L/min
  double hr = 0;  // beats/min
  double height = 0;
  double weight = 0;
};

struct SviResult {
  bool keep = false;
  double sv_ml = 0;
  double svi = 0;
  std::string reason;
};

inline constexpr double kSvMinMl = 20.0;
inline constexpr double kSvMaxMl = 200.0;

inline SviResult compute_svi_with_bsa(const HemoPoint& p, double bsa) {
  if (!(p.hr > 0) || !(p.co > 0)) throw std::invalid_argument("compute_svi: co and hr must be positive");
  if (!(bsa > 0)) throw std::invalid_argument("compute_svi: bsa must be positive");
  SviResult r;
  r.sv_ml = p.co * 1000.0 / p.hr;
  if (r.sv_ml < kSvMinMl || r.sv_ml > kSvMaxMl) {
    r.reason = "stroke volume " + std::to_string(r.sv_ml) + " mL outside [20, 200]";
    return r;
  }
  r.keep = true;
  r.svi = r.sv_ml / bsa;
  return r;
}

inline SviResult compute_svi(const HemoPoint& p, BsaFormula f = BsaFormula::du_bois) {
  if (!(p.hr > 0) || !(p.co > 0)) throw std::invalid_argument("compute_svi: co and hr must be positive");
  return compute_svi_with_bsa(p, body_surface_area(p.height, p.weight, f));
}

// ---------------------------------------------------------------------------
// case split

/// Splits at case granularity; n_test = round(test_fraction * n_cases) clamped to [1, n-1].
inline std::pair<Dataset, Dataset> split_by_case(const Dataset& ds, double test_fraction = 0.2, std::uint64_t seed = 0) {
  auto cases = ds.case_ids();
  if (cases.size() < 2) throw std::invalid_argument("split_by_case: need at least 2 cases, got " + std::to_string(cases.size()));
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("split_by_case: test_fraction must be in (0,1)");
  std::mt19937_64 rng(seed);
  std::shuffle(cases.begin(), cases.end(), rng);
  const auto n = static_cast<long>(cases.size());
  const long n_test = std::clamp(std::lround(test_fraction * static_cast<double>(n)), 1L, n - 1);
  const std::set<std::uint32_t> test_ids(cases.begin(), cases.begin() + n_test);
  Dataset train{ds.task, {}}, test{ds.task, {}};
  for (const auto& r : ds.records) (test_ids.count(r.case_id) ? test : train).records.push_back(r);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// PSD1 container

inline constexpr char kDatasetMagic[4] = {'P', 'S', 'D', '1'};
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 4 + 4 + 4;
inline constexpr std::size_t kRecordBytes = 4 + 4 * (kChannels * kSegmentLength) + 4 * 5;

enum class DecodeErrorKind { bad_magic, version_mismatch, truncated, bad_header, trailing_data };

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  const std::size_t n = out.size();
  out.resize(n + sizeof(U));
  std::memcpy(out.data() + n, b, sizeof(U));
}

template <class U>
U get_le(const std::uint8_t* p) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + ds.records.size() * kRecordBytes);
  out.insert(out.end(), kDatasetMagic, kDatasetMagic + 4);
  detail::put_le<std::uint16_t>(out, kDatasetVersion);
  detail::put_le<std::uint8_t>(out, ds.task == Task::classification ? 0 : 1);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.records.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kSegmentLength));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kChannels));
  for (const auto& r : ds.records) {
    if (r.ecg.size() != kSegmentLength || r.ppg.size() != kSegmentLength) {
      throw std::invalid_argument("encode_dataset: record of case " + std::to_string(r.case_id) + " has wrong segment length");
    }
    detail::put_le<std::uint32_t>(out, r.case_id);
    for (float v : r.ecg) detail::put_le<float>(out, v);
    for (float v : r.ppg) detail::put_le<float>(out, v);
    for (float v : {r.age, r.sex, r.height, r.weight, r.label}) detail::put_le<float>(out, v);
  }
  return out;
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw DecodeError(DecodeErrorKind::bad_magic, "dataset: bad magic (expected PSD1)");
  }
  if (bytes.size() < kHeaderBytes) throw DecodeError(DecodeErrorKind::truncated, "dataset: truncated header");
  const std::uint8_t* p = bytes.data() + 4;
  const auto version = detail::get_le<std::uint16_t>(p);
  if (version != kDatasetVersion) {
    throw DecodeError(DecodeErrorKind::version_mismatch, "dataset: unsupported version " + std::to_string(version));
  }
  const auto task = detail::get_le<std::uint8_t>(p + 2);
  const auto n = detail::get_le<std::uint32_t>(p + 3);
  const auto seg_len = detail::get_le<std::uint32_t>(p + 7);
  const auto n_ch = detail::get_le<std::uint32_t>(p + 11);
  if (task > 1 || seg_len != kSegmentLength || n_ch != kChannels) {
    throw DecodeError(DecodeErrorKind::bad_header, "dataset: unsupported header (task " + std::to_string(task) + ", seg_len " +
                                                       std::to_string(seg_len) + ", channels " + std::to_string(n_ch) + ")");
  }
  const std::size_t need = kHeaderBytes + static_cast<std::size_t>(n) * kRecordBytes;
  if (bytes.size() < need) {
    throw DecodeError(DecodeErrorKind::truncated, "dataset: truncated (" + std::to_string(bytes.size()) + " of " +
                                                      std::to_string(need) + " bytes)");
  }
  if (bytes.size() > need) throw DecodeError(DecodeErrorKind::trailing_data, "dataset: trailing bytes after last record");
  Dataset ds{task == 0 ? Task::classification : Task::regression, {}};
  ds.records.resize(n);
  p = bytes.data() + kHeaderBytes;
  for (auto& r : ds.records) {
    r.case_id = detail::get_le<std::uint32_t>(p);
    p += 4;
    r.ecg.resize(kSegmentLength);
    r.ppg.resize(kSegmentLength);
    for (auto& v : r.ecg) v = detail::get_le<float>(p), p += 4;
    for (auto& v : r.ppg) v = detail::get_le<float>(p), p += 4;
    for (float* f : {&r.age, &r.sex, &r.height, &r.weight, &r.label}) *f = detail::get_le<float>(p), p += 4;
  }
  return ds;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_dataset(const std::string& path, const Dataset& ds) { write_bytes(path, encode_dataset(ds)); }
inline Dataset read_dataset(const std::string& path) { return decode_dataset(read_bytes(path)); }

using Manifest = std::map<std::string, std::string>;

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& [k, v] : m) f << k << '=' << v << '\n';
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest line without '=': " + line);
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

inline std::string manifest_path(const std::string& dataset_path) { return dataset_path + ".manifest"; }

/// Applies filter_segment to every record.
inline std::pair<Dataset, Manifest> preprocess(const Dataset& raw) {
  Dataset out{raw.task, {}};
  std::size_t drop_ecg = 0, drop_ppg = 0;
  for (const auto& r : raw.records) {
    const auto res = filter_segment(r.ecg, r.ppg);
    if (res.keep) {
      out.records.push_back(r);
    } else {
      (res.channel == "ecg" ? drop_ecg : drop_ppg)++;
    }
  }
  Manifest m{{"filter.input", std::to_string(raw.size())},
             {"filter.kept", std::to_string(out.size())},
             {"filter.dropped_ecg", std::to_string(drop_ecg)},
             {"filter.dropped_ppg", std::to_string(drop_ppg)},
             {"task", std::string(to_string(raw.task))}};
  return {std::move(out), std::move(m)};
}

// ---------------------------------------------------------------------------
// synthetic generator

struct SyntheticSpec {
  std::size_t n_cases = 100;
  std::size_t samples_per_case = 20;
  Task task = Task::classification;
  std::uint64_t seed = 0;
  double difficulty = 1.0;   // (0,1]; 1 = cleanest, most separable
  double prevalence = 0.05;  // positive fraction (classification)
  double artifact_rate = 0;  // fraction of segments given an out-of-range glitch
  BsaFormula bsa = BsaFormula::du_bois;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Pulse wave of one beat, phase in [0,1): fast upstroke, slow decay.
inline double pulse_shape(double phase) {
  const double up = 0.15;
  if (phase < up) return std::sin(0.5 * std::numbers::pi * phase / up);
  return std::exp(-3.5 * (phase - up));
}

// Step MAP trace at 1 Hz covering [end - 10, end + 310].
inline MapTrace synth_map_trace(bool hypotensive, double end, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MapTrace t;
  const double base = 75.0 + 20.0 * u(rng);
  double dip_start = -1, dip_len = 0, dip_level = 0;
  if (hypotensive) {
    dip_len = 70.0 + 130.0 * u(rng);
    dip_start = end + 1.0 + (300.0 - dip_len - 1.0) * u(rng);
    dip_level = 55.0 + 10.0 * u(rng);
  } else if (u(rng) < 0.3) {
    dip_len = 10.0 + 40.0 * u(rng);
    dip_start = end + 1.0 + (300.0 - dip_len - 1.0) * u(rng);
    dip_level = 58.0 + 7.0 * u(rng);
  }
  for (int s = -10; s <= 310; ++s) {
    const double ts = end + s;
    const bool in_dip = dip_start >= 0 && ts >= std::floor(dip_start) && ts < std::floor(dip_start) + std::ceil(dip_len);
    t.timestamps.push_back(ts);
    t.map_values.push_back(in_dip ? dip_level : base + 2.0 * (u(rng) - 0.5));
  }
  return t;
}

}  // namespace detail

/// Quasi-periodic ECG (R-peak train + baseline wander) and PPG (pulse train) at 100 Hz.
///
/// classification: positives carry a lowered, declining PPG pulse amplitude;
///                 labels come from synthetic MAP traces through label_hypotension.
/// regression:     beat amplitude A ~ U(0.6, 1.4) sets stroke volume 30 + 50 A mL;
///                 the label is its SVI under the chosen BSA formula.
/// Noise sd is 0.02 + 0.2 (1 - difficulty) on both channels.
inline std::pair<Dataset, Manifest> generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.difficulty > 0.0 && spec.difficulty <= 1.0)) throw std::invalid_argument("difficulty must be in (0,1]");
  if (!(spec.prevalence >= 0.0 && spec.prevalence <= 1.0)) throw std::invalid_argument("prevalence must be in [0,1]");
  if (spec.n_cases == 0 || spec.samples_per_case == 0) throw std::invalid_argument("n_cases and samples_per_case must be positive");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double d = spec.difficulty;
  const double noise = 0.02 + 0.2 * (1.0 - d);
  Dataset ds{spec.task, {}};
  ds.records.reserve(spec.n_cases * spec.samples_per_case);
  std::size_t dropped_svi = 0, artifacts = 0;

  for (std::size_t c = 0; c < spec.n_cases; ++c) {
    const float sex = u(rng) < 0.5 ? 0.0f : 1.0f;
    const double age = 20.0 + 60.0 * u(rng);
    const double height = (sex > 0.5f ? 160.0 : 150.0) + 30.0 * u(rng);
    const double weight = 45.0 + 55.0 * u(rng);
    const double gain = 0.95 + 0.1 * u(rng);
    const double hr_case = 60.0 + 30.0 * u(rng);
    double t_case = 600.0 * u(rng);

    for (std::size_t s = 0; s < spec.samples_per_case; ++s, t_case += 20.0) {
      const double hr = std::clamp(hr_case + 4.0 * (u(rng) - 0.5), 40.0, 140.0);
      const double period = 60.0 / hr;
      const double phase0 = u(rng);
      const double wander_amp = 0.05 + 0.1 * u(rng);
      const double wander_f = 0.15 + 0.15 * u(rng);
      const double wander_ph = 2.0 * std::numbers::pi * u(rng);
      const double r_amp = 0.9 + 0.4 * u(rng);

      double amp_start = 1.0, amp_end = 1.0;
      float label = 0.0f;
      if (spec.task == Task::classification) {
        const bool positive = u(rng) < spec.prevalence;
        const double level = 0.8 + 0.4 * u(rng) - (positive ? 0.5 * d : 0.0);
        const double decline = positive ? 0.3 * d * u(rng) : 0.0;
        amp_start = level;
        amp_end = level * (1.0 - decline);
        const auto trace = detail::synth_map_trace(positive, t_case + 20.0, rng);
        label = static_cast<float>(label_hypotension(trace, t_case + 20.0));
      } else {
        const double a = 0.6 + 0.8 * u(rng);
        amp_start = amp_end = a;
        const double sv = 30.0 + 50.0 * a;
        const auto r = compute_svi(HemoPoint{sv * hr / 1000.0, hr, height, weight}, spec.bsa);
        if (!r.keep) {
          ++dropped_svi;
          continue;
        }
        label = static_cast<float>(r.svi);
      }

      SampleRecord rec;
      rec.case_id = static_cast<std::uint32_t>(c);
      rec.age = static_cast<float>(age);
      rec.sex = sex;
      rec.height = static_cast<float>(height);
      rec.weight = static_cast<float>(weight);
      rec.label = label;
      rec.ecg.resize(kSegmentLength);
      rec.ppg.resize(kSegmentLength);
      for (std::size_t i = 0; i < kSegmentLength; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        const double beat = t / period + phase0;
        const double ph = beat - std::floor(beat);
        const double dr = (ph > 0.5 ? ph - 1.0 : ph) * period;  // s to nearest R peak
        const double ecg = r_amp * std::exp(-0.5 * std::pow(dr / 0.012, 2)) -
                           0.15 * std::exp(-0.5 * std::pow((dr + 0.03) / 0.01, 2)) -
                           0.2 * std::exp(-0.5 * std::pow((dr - 0.03) / 0.012, 2)) +
                           0.25 * std::exp(-0.5 * std::pow((dr - 0.25) / 0.04, 2)) +
                           wander_amp * std::sin(2.0 * std::numbers::pi * wander_f * t + wander_ph);
        const double frac = static_cast<double>(i) / static_cast<double>(kSegmentLength - 1);
        const double amp = gain * (amp_start + (amp_end - amp_start) * frac);
        const double pp = ph - 0.2 - std::floor(ph - 0.2);  // pulse lags the R peak
        const double ppg = 2.0 + amp * detail::pulse_shape(pp);
        rec.ecg[i] = static_cast<float>(ecg + noise * gauss(rng));
        rec.ppg[i] = static_cast<float>(ppg + noise * gauss(rng));
      }
      if (spec.artifact_rate > 0 && u(rng) < spec.artifact_rate) {
        const auto at = static_cast<std::size_t>(u(rng) * kSegmentLength) % kSegmentLength;
        if (u(rng) < 0.5) {
          rec.ecg[at] = 6.0f;
        } else {
          rec.ppg[at] = 0.0f;
        }
        ++artifacts;
      }
      ds.records.push_back(std::move(rec));
    }
  }

  Manifest m{{"generator.seed", std::to_string(spec.seed)},
             {"generator.cases", std::to_string(spec.n_cases)},
             {"generator.samples_per_case", std::to_string(spec.samples_per_case)},
             {"generator.difficulty", detail::fmt_double(spec.difficulty)},
             {"generator.artifact_rate", detail::fmt_double(spec.artifact_rate)},
             {"generator.artifacts", std::to_string(artifacts)},
             {"task", std::string(to_string(spec.task))},
             {"n_samples", std::to_string(ds.size())}};
  if (spec.task == Task::classification) {
    m["generator.prevalence"] = detail::fmt_double(spec.prevalence);
    m["realized_prevalence"] = detail::fmt_double(ds.positive_fraction());
  } else {
    m["generator.bsa"] = spec.bsa == BsaFormula::du_bois ? "du_bois" : "mosteller";
    m["filter.dropped_svi"] = std::to_string(dropped_svi);
  }
  return {std::move(ds), std::move(m)};
}

}  // namespace physioattn
