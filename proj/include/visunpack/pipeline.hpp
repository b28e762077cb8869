#pragma once

// End-to-end composition: manifests, featurization, the nearest-neighbour
// baseline, metrics, and throughput accounting.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visunpack/feature_map.hpp"
#include "visunpack/ingest.hpp"
#include "visunpack/params.hpp"

namespace visunpack::pipeline {

// ---------------------------------------------------------------------------
// Manifest

enum class Split { train, test };

struct SampleInput {
  std::filesystem::path path;
  std::string label;
  bool packed = false;
  /// Content hash; computed from the file when empty.
  std::string sample_id;
};

struct ManifestEntry {
  std::string sample_id;
  std::filesystem::path path;
  std::string label;
  bool packed = false;
  Split split = Split::train;
  double weight = 1.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Categories with fewer than two samples (kept all-train).
  std::vector<std::string> warnings;
};

/// Per-category seeded split: round(fraction * n) train samples, at least one
/// of each side when n >= 2. weight = train total / train count of category.
/// Throws Error{DuplicateSample | InvalidArgument}.
DatasetManifest build_manifest(const std::vector<SampleInput>& samples, double split_fraction,
                               std::uint64_t seed);

std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);

// ---------------------------------------------------------------------------
// Featurization

/// ingest -> forge -> normalize -> feature map -> pad to grid -> enhance -> resize.
/// Errors carry the failing stage name.
FeatureMap featurize_program(const ingest::ProgramDisassembly& program, const PipelineParams& params,
                             int threads = 0);

struct FeaturizeRequest {
  std::filesystem::path sample;
  /// Interchange document; without one the raw bytes are cut into pseudo-blocks.
  std::optional<std::filesystem::path> disassembly;
  std::filesystem::path out_dir;
  bool png = false;
};

/// Writes `<out_dir>/<sample sha256>.samp` (plus `.png` when asked) and
/// returns the tensor path.
std::filesystem::path featurize(const FeaturizeRequest& request, const PipelineParams& params);

// ---------------------------------------------------------------------------
// Nearest-neighbour baseline

struct LabeledMap {
  FeatureMap map;
  std::string label;
};

/// Squared L2 distance from `query` to every training map (parallel).
/// Throws Error{EmptyTrainingSet | ShapeMismatch}.
std::vector<std::uint64_t> knn_distances(const std::vector<LabeledMap>& train, const FeatureMap& query);
std::vector<std::uint64_t> knn_distances_serial(const std::vector<LabeledMap>& train,
                                                const FeatureMap& query);

/// Majority vote among the k nearest; ties by summed L2 distance, then label.
std::string knn_classify(const std::vector<LabeledMap>& train, const FeatureMap& query, std::size_t k = 1);

// ---------------------------------------------------------------------------
// Metrics

struct CategoryMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t support = 0;
  bool never_predicted = false;
  bool absent_from_truth = false;
};

struct MetricsReport {
  std::vector<std::string> labels;
  std::vector<CategoryMetrics> per_category;
  /// confusion[true][predicted], indexed like `labels`.
  std::vector<std::vector<std::size_t>> confusion;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_accuracy = 0.0;
  /// trace / total
  double accuracy = 0.0;
  double avg_time = 0.0;
  std::uint64_t storage_bytes = 0;
  std::uint64_t corpus_bytes = 0;
};

struct Prediction {
  std::string truth;
  std::string predicted;
};

/// Standard macro-averaged metrics. Precision is 0 for a never-predicted
/// category and recall 0 for one absent from the truth; both are flagged.
MetricsReport evaluate(const std::vector<Prediction>& predictions);

std::string metrics_table(const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);

// ---------------------------------------------------------------------------
// Throughput

enum class Stage { ingest, forge, map, enhance, resize };

std::optional<Stage> parse_stage(std::string_view name);

struct BenchReport {
  std::size_t num_files = 0;
  double total_seconds = 0.0;
  /// total_seconds / num_files
  double avg_time = 0.0;
  std::uint64_t storage_bytes = 0;
  std::uint64_t corpus_bytes = 0;
  double storage_ratio = 0.0;
};

/// Times the requested stage prefix: avg_time = T / num_files. With no
/// stages only file loading is timed. A sibling `<path>.dis` is used as the
/// disassembly when present. storage_bytes counts SAMP tensor bytes when the
/// last stage produces a map. Throws Error{InvalidArgument} for no paths.
BenchReport bench(const std::vector<std::filesystem::path>& paths, const std::set<Stage>& stages,
                  const PipelineParams& params, int threads = 0);

/// avg_time and storage ratio from raw totals.
BenchReport summarize(std::size_t num_files, double total_seconds, std::uint64_t storage_bytes,
                      std::uint64_t corpus_bytes);

std::string bench_json(const BenchReport& report);

}  // namespace visunpack::pipeline
