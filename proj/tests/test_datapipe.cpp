#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "physioattn/datapipe.hpp"

using namespace physioattn;

namespace {

std::vector<float> constant(float v) { return std::vector<float>(kSegmentLength, v); }

// Step trace sampled at 1 Hz over [start, start + span] with `low` inside [from, to).
MapTrace step_trace(double start, double span, double from, double to, double low, double high = 80.0) {
  MapTrace t;
  for (double s = start; s <= start + span; s += 1.0) {
    t.timestamps.push_back(s);
    t.map_values.push_back(s >= from && s < to ? low : high);
  }
  return t;
}

SampleRecord random_record(std::mt19937_64& rng, std::uint32_t case_id) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  SampleRecord r;
  r.case_id = case_id;
  r.ecg.resize(kSegmentLength);
  r.ppg.resize(kSegmentLength);
  for (auto& v : r.ecg) v = u(rng);
  for (auto& v : r.ppg) v = 2.f + u(rng);
  r.age = 40.f + u(rng);
  r.sex = 1.f;
  r.height = 170.f + u(rng);
  r.weight = 70.f + u(rng);
  r.label = u(rng) > 0 ? 1.f : 0.f;
  return r;
}

Dataset dataset_with_cases(std::size_t n_cases, std::size_t per_case = 1) {
  Dataset ds;
  std::mt19937_64 rng(1);
  for (std::size_t c = 0; c < n_cases; ++c)
    for (std::size_t k = 0; k < per_case; ++k) {
      SampleRecord r;
      r.case_id = static_cast<std::uint32_t>(c * 7 + 3);
      ds.records.push_back(r);
    }
  return ds;
}

// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
double pair_auroc(const std::vector<float>& labels, const std::vector<double>& scores) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[i] < 0.5f || labels[j] > 0.5f) continue;
      pairs += 1;
      good += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  return good / pairs;
}

}  // namespace

TEST(Filter, InRangeSegmentIsKept) {
  EXPECT_TRUE(filter_segment(constant(1.0f), constant(50.0f)).keep);
  EXPECT_TRUE(filter_segment(constant(-2.0f), constant(1e-6f)).keep);
}

TEST(Filter, EcgUpperBoundIsInclusive) {
  auto ecg = constant(0.5f);
  ecg[17] = 4.5f;
  EXPECT_TRUE(filter_segment(ecg, constant(1.0f)).keep);
  ecg[17] = std::nextafter(4.5f, 5.0f);
  auto r = filter_segment(ecg, constant(1.0f));
  EXPECT_FALSE(r.keep);
  EXPECT_EQ(r.channel, "ecg");
  EXPECT_EQ(r.index, 17u);
  ecg[17] = 4.6f;
  EXPECT_FALSE(filter_segment(ecg, constant(1.0f)).keep);
}

TEST(Filter, EcgLowerBoundIsInclusive) {
  auto ecg = constant(0.0f);
  ecg[0] = -2.0f;
  EXPECT_TRUE(filter_segment(ecg, constant(1.0f)).keep);
  ecg[0] = std::nextafter(-2.0f, -3.0f);
  EXPECT_FALSE(filter_segment(ecg, constant(1.0f)).keep);
}

TEST(Filter, NonPositivePpgIsDropped) {
  auto ppg = constant(1.0f);
  ppg[1999] = 0.0f;
  auto r = filter_segment(constant(0.f), ppg);
  EXPECT_FALSE(r.keep);
  EXPECT_EQ(r.channel, "ppg");
  EXPECT_EQ(r.index, 1999u);
  EXPECT_NE(r.reason().find("ppg"), std::string::npos);
  ppg[1999] = -0.5f;
  EXPECT_FALSE(filter_segment(constant(0.f), ppg).keep);
  ppg[1999] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(filter_segment(constant(0.f), ppg).keep);
}

TEST(Filter, WrongLengthIsAnErrorNotADrop) {
  std::vector<float> short_seg(1999, 1.0f);
  EXPECT_THROW(filter_segment(short_seg, constant(1.0f)), std::invalid_argument);
  EXPECT_THROW(filter_segment(constant(1.0f), std::vector<float>(2001, 1.0f)), std::invalid_argument);
}

TEST(Filter, PreprocessCountsDrops) {
  Dataset raw;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 5; ++i) raw.records.push_back(random_record(rng, i));
  raw.records[1].ecg[5] = 9.f;
  raw.records[3].ppg[5] = 0.f;
  auto [kept, m] = preprocess(raw);
  EXPECT_EQ(kept.size(), 3u);
  EXPECT_EQ(m.at("filter.dropped_ecg"), "1");
  EXPECT_EQ(m.at("filter.dropped_ppg"), "1");
  EXPECT_EQ(m.at("filter.kept"), "3");
}

TEST(Filter, SegmentWindowsAreConsecutive) {
  EXPECT_EQ(segment_windows(6500), (std::vector<std::size_t>{0, 2000, 4000}));
  EXPECT_TRUE(segment_windows(1999).empty());
  EXPECT_EQ(segment_windows(5000, 2000, 1000), (std::vector<std::size_t>{0, 1000, 2000, 3000}));
}

TEST(Hypotension, NinetySecondsLowIsPositive) {
  EXPECT_EQ(label_hypotension(step_trace(0, 320, 120, 210, 60.0), 0.0), 1);
}

TEST(Hypotension, NeverLowIsNegative) {
  EXPECT_EQ(label_hypotension(step_trace(0, 320, 0, 0, 60.0, 70.0), 0.0), 0);
}

TEST(Hypotension, ExactlySixtySecondsIsNegative) {
  EXPECT_EQ(label_hypotension(step_trace(0, 320, 100, 160, 60.0), 0.0), 0);
}

TEST(Hypotension, SixtyOneSecondsAtThresholdIsPositive) {
  EXPECT_EQ(label_hypotension(step_trace(0, 320, 100, 161, 65.0), 0.0), 1);
  // 65 is inside the hypotensive range, 65.01 is not
  EXPECT_EQ(label_hypotension(step_trace(0, 320, 100, 161, 65.01), 0.0), 0);
}

TEST(Hypotension, OnlyTheHorizonCounts) {
  // low run entirely before the segment end
  EXPECT_EQ(label_hypotension(step_trace(-200, 520, -150, -50, 50.0), 0.0), 0);
  // low run starting after the 5 minute horizon
  EXPECT_EQ(label_hypotension(step_trace(0, 500, 301, 400, 50.0), 0.0), 0);
  // run straddling the horizon end with only 50 s inside
  EXPECT_EQ(label_hypotension(step_trace(0, 400, 250, 400, 50.0), 0.0), 0);
  // interrupted runs do not add up
  MapTrace t = step_trace(0, 320, 10, 50, 60.0);
  for (std::size_t i = 0; i < t.timestamps.size(); ++i)
    if (t.timestamps[i] >= 51 && t.timestamps[i] < 91) t.map_values[i] = 60.0;
  EXPECT_EQ(label_hypotension(t, 0.0), 0);
}

TEST(Hypotension, InvariantToResamplingOfStepGeometry) {
  // Same step function sampled at 1 Hz and at its change points only.
  MapTrace dense = step_trace(0, 320, 100, 175, 62.0);
  MapTrace sparse{{0, 100, 175, 320}, {80, 62, 80, 80}};
  EXPECT_EQ(label_hypotension(dense, 0.0), label_hypotension(sparse, 0.0));
  MapTrace sparse_short{{0, 100, 160, 320}, {80, 62, 80, 80}};
  EXPECT_EQ(label_hypotension(sparse_short, 0.0), 0);
  EXPECT_EQ(label_hypotension(sparse, 0.0), 1);
}

TEST(Hypotension, RejectsInsufficientCoverageAndBadTraces) {
  EXPECT_THROW(label_hypotension(step_trace(0, 200, 0, 0, 60), 0.0), std::invalid_argument);
  EXPECT_THROW(label_hypotension(step_trace(10, 400, 0, 0, 60), 0.0), std::invalid_argument);
  MapTrace unordered{{0, 5, 5, 400}, {80, 80, 80, 80}};
  EXPECT_THROW(label_hypotension(unordered, 0.0), std::invalid_argument);
  MapTrace mismatch{{0, 400}, {80}};
  EXPECT_THROW(label_hypotension(mismatch, 0.0), std::invalid_argument);
}

TEST(Svi, DirectFormulaWithForcedBsa) {
  auto r = compute_svi_with_bsa({5.0, 60.0, 0, 0}, 1.8);
  ASSERT_TRUE(r.keep);
  EXPECT_NEAR(r.sv_ml, 83.333333333, 1e-8);
  EXPECT_NEAR(r.svi, 46.296296296, 1e-8);
}

TEST(Svi, StrokeVolumeBoundsAreInclusive) {
  EXPECT_FALSE(compute_svi_with_bsa({1.0, 60.0, 0, 0}, 1.8).keep);  // 16.67 mL
  auto lo = compute_svi_with_bsa({1.2, 60.0, 0, 0}, 2.0);           // 20 mL
  EXPECT_TRUE(lo.keep);
  EXPECT_DOUBLE_EQ(lo.svi, 10.0);
  EXPECT_TRUE(compute_svi_with_bsa({12.0, 60.0, 0, 0}, 2.0).keep);  // 200 mL
  EXPECT_FALSE(compute_svi_with_bsa({12.06, 60.0, 0, 0}, 2.0).keep);
  EXPECT_FALSE(compute_svi_with_bsa({1.19, 60.0, 0, 0}, 2.0).keep);
}

TEST(Svi, RejectsNonPositiveInputs) {
  EXPECT_THROW(compute_svi({5.0, 0.0, 170, 70}), std::invalid_argument);
  EXPECT_THROW(compute_svi({0.0, 60.0, 170, 70}), std::invalid_argument);
  EXPECT_THROW(compute_svi({-1.0, 60.0, 170, 70}), std::invalid_argument);
  EXPECT_THROW(body_surface_area(0, 70), std::invalid_argument);
}

TEST(Svi, BodySurfaceAreaGoldenValues) {
  // 40-digit evaluations of 0.007184 * 70^0.425 * 170^0.725 and sqrt(170 * 70 / 3600)
  EXPECT_NEAR(body_surface_area(170, 70), 1.809707801753247399921869258723127062153, 1e-14);
  EXPECT_NEAR(body_surface_area(170, 70, BsaFormula::mosteller), 1.818118685772619068583692414562150312134, 1e-14);
  auto r = compute_svi({5.0, 60.0, 170, 70});
  EXPECT_NEAR(r.svi, (5000.0 / 60.0) / 1.809707801753247399921869258723127062153, 1e-12);
  EXPECT_EQ(parse_bsa_formula("mosteller"), BsaFormula::mosteller);
  EXPECT_THROW(parse_bsa_formula("haycock"), std::invalid_argument);
}

TEST(Split, TenCasesGiveEightAndTwo) {
  auto ds = dataset_with_cases(10, 3);
  auto [train, test] = split_by_case(ds, 0.2, 5);
  EXPECT_EQ(train.case_ids().size(), 8u);
  EXPECT_EQ(test.case_ids().size(), 2u);
  EXPECT_EQ(train.size() + test.size(), ds.size());
  const auto train_ids = train.case_ids();
  const std::set<std::uint32_t> a(train_ids.begin(), train_ids.end());
  for (auto id : test.case_ids()) EXPECT_EQ(a.count(id), 0u);
}

TEST(Split, RoundsTheCaseCount) {
  auto ds = dataset_with_cases(3211);
  auto [train, test] = split_by_case(ds, 0.2, 0);
  EXPECT_EQ(test.case_ids().size(), 642u);  // round(642.2)
  EXPECT_EQ(train.case_ids().size(), 2569u);
}

TEST(Split, DeterministicPerSeedAndClamped) {
  auto ds = dataset_with_cases(50);
  auto a = split_by_case(ds, 0.2, 9), b = split_by_case(ds, 0.2, 9), c = split_by_case(ds, 0.2, 10);
  EXPECT_EQ(a.second.case_ids(), b.second.case_ids());
  EXPECT_NE(a.second.case_ids(), c.second.case_ids());
  auto tiny = split_by_case(dataset_with_cases(2), 0.01, 0);
  EXPECT_EQ(tiny.second.case_ids().size(), 1u);
  EXPECT_THROW(split_by_case(dataset_with_cases(1), 0.2, 0), std::invalid_argument);
  EXPECT_THROW(split_by_case(ds, 1.0, 0), std::invalid_argument);
}

TEST(Codec, RoundTripIsLossless) {
  std::mt19937_64 rng(4);
  Dataset ds{Task::regression, {}};
  for (int i = 0; i < 3; ++i) ds.records.push_back(random_record(rng, 100 + i));
  auto bytes = encode_dataset(ds);
  EXPECT_EQ(bytes.size(), kHeaderBytes + 3 * kRecordBytes);
  EXPECT_EQ(decode_dataset(bytes), ds);
}

TEST(Codec, HeaderLayoutIsLittleEndian) {
  Dataset ds{Task::regression, {}};
  std::mt19937_64 rng(4);
  ds.records.push_back(random_record(rng, 0x01020304));
  auto b = encode_dataset(ds);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PSD1");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
  EXPECT_EQ(b[6], 1);  // regression
  EXPECT_EQ(b[7], 1);  // n_samples
  EXPECT_EQ(b[11], 0xD0);
  EXPECT_EQ(b[12], 0x07);  // 2000
  EXPECT_EQ(b[15], 2);
  EXPECT_EQ(b[19], 0x04);
  EXPECT_EQ(b[22], 0x01);
  float first_ecg;
  std::memcpy(&first_ecg, b.data() + 23, 4);
  EXPECT_EQ(first_ecg, ds.records[0].ecg[0]);
  float first_ppg;
  std::memcpy(&first_ppg, b.data() + 23 + 4 * kSegmentLength, 4);
  EXPECT_EQ(first_ppg, ds.records[0].ppg[0]);
}

TEST(Codec, EmptyDatasetIsValid) {
  Dataset ds{Task::classification, {}};
  auto bytes = encode_dataset(ds);
  EXPECT_EQ(bytes.size(), kHeaderBytes);
  EXPECT_EQ(decode_dataset(bytes), ds);
}

namespace {

DecodeErrorKind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_dataset(bytes);
  } catch (const DecodeError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode did not fail";
  return DecodeErrorKind::bad_header;
}

}  // namespace

TEST(Codec, CorruptionGivesDistinctErrors) {
  std::mt19937_64 rng(5);
  Dataset ds{Task::classification, {random_record(rng, 1), random_record(rng, 2)}};
  const auto good = encode_dataset(ds);
  auto b = good;
  b[0] = 'X';
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::bad_magic);
  b = good;
  b[4] = 2;
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::version_mismatch);
  b = good;
  b.resize(b.size() - 1);
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::truncated);
  EXPECT_EQ(decode_kind({'P', 'S'}), DecodeErrorKind::bad_magic);
  b = good;
  b.resize(10);
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::truncated);
  b = good;
  b[6] = 7;
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::bad_header);
  b = good;
  b[11] = 0;
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::bad_header);
  b = good;
  b.push_back(0);
  EXPECT_EQ(decode_kind(b), DecodeErrorKind::trailing_data);
}

TEST(Codec, FilesAndManifests) {
  const auto dir = std::filesystem::temp_directory_path() / "physioattn_datapipe_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "d.psd").string();
  auto [ds, m] = generate_synthetic({4, 2, Task::classification, 3});
  write_dataset(path, ds);
  write_manifest(manifest_path(path), m);
  EXPECT_EQ(read_dataset(path), ds);
  EXPECT_EQ(read_manifest(manifest_path(path)), m);
  EXPECT_THROW(read_dataset((dir / "missing.psd").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticSpec s{6, 3, Task::classification, 11};
  EXPECT_EQ(encode_dataset(generate_synthetic(s).first), encode_dataset(generate_synthetic(s).first));
  s.seed = 12;
  auto other = generate_synthetic(s).first;
  s.seed = 11;
  EXPECT_NE(encode_dataset(other), encode_dataset(generate_synthetic(s).first));
  s.task = Task::regression;
  EXPECT_EQ(encode_dataset(generate_synthetic(s).first), encode_dataset(generate_synthetic(s).first));
}

TEST(Synthetic, RecordsSatisfyInvariants) {
  for (auto task : {Task::classification, Task::regression}) {
    auto [ds, m] = generate_synthetic({20, 5, task, 1, 0.5});
    EXPECT_EQ(ds.size(), 100u);
    for (const auto& r : ds.records) {
      EXPECT_TRUE(filter_segment(r.ecg, r.ppg).keep);
      EXPECT_TRUE(r.sex == 0.f || r.sex == 1.f);
      if (task == Task::classification) {
        EXPECT_TRUE(r.label == 0.f || r.label == 1.f);
      } else {
        EXPECT_GT(r.label, 0.f);
      }
    }
    EXPECT_EQ(ds.case_ids().size(), 20u);
  }
}

TEST(Synthetic, ArtifactsAreCaughtByTheFilter) {
  auto [ds, m] = generate_synthetic({20, 10, Task::classification, 2, 1.0, 0.05, 0.3});
  auto [kept, fm] = preprocess(ds);
  const auto artifacts = std::stoul(m.at("generator.artifacts"));
  EXPECT_GT(artifacts, 0u);
  EXPECT_EQ(ds.size() - kept.size(), artifacts);
}

TEST(Synthetic, PrevalenceWithinOnePercent) {
  auto [ds, m] = generate_synthetic({500, 20, Task::classification, 21, 1.0, 0.05});
  ASSERT_EQ(ds.size(), 10000u);
  EXPECT_NEAR(ds.positive_fraction(), 0.05, 0.01);
  EXPECT_NEAR(std::stod(m.at("realized_prevalence")), ds.positive_fraction(), 1e-6);
}

TEST(Synthetic, PlantedFeatureSeparatesClasses) {
  auto [ds, m] = generate_synthetic({200, 10, Task::classification, 8, 1.0, 0.2});
  // planted statistic: PPG pulse amplitude (standard deviation of the channel)
  std::vector<double> x;
  std::vector<float> y;
  for (const auto& r : ds.records) {
    double mu = 0, var = 0;
    for (float v : r.ppg) mu += v;
    mu /= kSegmentLength;
    for (float v : r.ppg) var += (v - mu) * (v - mu);
    x.push_back(std::sqrt(var / kSegmentLength));
    y.push_back(r.label);
  }
  // one-feature logistic regression by Newton iterations
  double mx = 0, sx = 0;
  for (double v : x) mx += v / x.size();
  for (double v : x) sx += (v - mx) * (v - mx) / x.size();
  sx = std::sqrt(sx);
  double w0 = 0, w1 = 0;
  for (int it = 0; it < 25; ++it) {
    double g0 = 0, g1 = 0, h00 = 1e-6, h01 = 0, h11 = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (x[i] - mx) / sx, p = 1 / (1 + std::exp(-(w0 + w1 * z)));
      g0 += p - y[i];
      g1 += (p - y[i]) * z;
      h00 += p * (1 - p);
      h01 += p * (1 - p) * z;
      h11 += p * (1 - p) * z * z;
    }
    const double det = h00 * h11 - h01 * h01;
    w0 -= (h11 * g0 - h01 * g1) / det;
    w1 -= (h00 * g1 - h01 * g0) / det;
  }
  std::vector<double> score;
  for (double v : x) score.push_back(w0 + w1 * (v - mx) / sx);
  EXPECT_LT(w1, 0.0);  // positives carry lower pulse amplitude
  EXPECT_GT(pair_auroc(y, score), 0.99);
}

TEST(Synthetic, RegressionTargetFollowsPlantedAmplitude) {
  auto [ds, m] = generate_synthetic({30, 5, Task::regression, 3});
  ASSERT_EQ(m.at("filter.dropped_svi"), "0");
  for (const auto& r : ds.records) {
    // sv = 30 + 50 A with A in [0.6, 1.4] gives 60..100 mL
    const double bsa = body_surface_area(r.height, r.weight);
    EXPECT_GE(r.label * bsa, 60.0 - 1e-3);
    EXPECT_LE(r.label * bsa, 100.0 + 1e-3);
  }
}

TEST(Synthetic, RejectsBadSpecs) {
  EXPECT_THROW(generate_synthetic({0, 5}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({5, 0}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({5, 5, Task::classification, 0, 0.0}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({5, 5, Task::classification, 0, 1.5}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({5, 5, Task::classification, 0, 1.0, 1.5}), std::invalid_argument);
}
