#include "visunpack/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "visunpack/clahe.hpp"
#include "visunpack/error.hpp"
#include "visunpack/hash.hpp"
#include "visunpack/semanticforge.hpp"

namespace visunpack::pipeline {

namespace {

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw e.with_stage(stage);
  }
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

DatasetManifest build_manifest(const std::vector<SampleInput>& samples, double split_fraction,
                               std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "split_fraction must be in (0, 1)");
  }
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::map<std::string, std::vector<std::size_t>> by_label;
  manifest.entries.reserve(samples.size());
  for (const auto& s : samples) {
    ManifestEntry e;
    e.sample_id = s.sample_id.empty() ? sha256_hex(read_file(s.path)) : s.sample_id;
    if (!seen.insert(e.sample_id).second) {
      throw Error(ErrorCode::DuplicateSample, e.sample_id + " (" + s.path.string() + ")");
    }
    e.path = s.path;
    e.label = s.label;
    e.packed = s.packed;
    by_label[e.label].push_back(manifest.entries.size());
    manifest.entries.push_back(std::move(e));
  }

  std::mt19937_64 rng(seed);
  std::map<std::string, std::size_t> train_count;
  std::size_t train_total = 0;
  for (auto& [label, idx] : by_label) {
    const std::size_t n = idx.size();
    std::size_t n_train = n;
    if (n < 2) {
      manifest.warnings.push_back("category '" + label + "' has " + std::to_string(n) +
                                  " sample(s); kept all-train");
    } else {
      n_train = static_cast<std::size_t>(std::llround(split_fraction * static_cast<double>(n)));
      n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    }
    // Fisher-Yates with our own draws so the split does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    for (std::size_t k = 0; k < n; ++k) {
      manifest.entries[idx[k]].split = k < n_train ? Split::train : Split::test;
    }
    train_count[label] = n_train;
    train_total += n_train;
  }
  for (auto& e : manifest.entries) {
    e.weight = static_cast<double>(train_total) / static_cast<double>(train_count[e.label]);
  }
  return manifest;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "#sample_id\tpath\tlabel\tpacked\tsplit\tweight\n";
  os << std::setprecision(17);
  for (const auto& e : manifest.entries) {
    os << e.sample_id << '\t' << e.path.string() << '\t' << e.label << '\t' << (e.packed ? 1 : 0)
       << '\t' << (e.split == Split::train ? "train" : "test") << '\t' << e.weight << '\n';
  }
  return os.str();
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const auto eol = std::min(text.find('\n', pos), text.size());
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 6 || (f[4] != "train" && f[4] != "test") || (f[3] != "0" && f[3] != "1")) {
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(line_no) + ": expected 6 fields");
    }
    ManifestEntry e;
    e.sample_id = std::string(f[0]);
    e.path = std::string(f[1]);
    e.label = std::string(f[2]);
    e.packed = f[3] == "1";
    e.split = f[4] == "train" ? Split::train : Split::test;
    try {
      e.weight = std::stod(std::string(f[5]));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(line_no) + ": bad weight");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------

FeatureMap featurize_program(const ingest::ProgramDisassembly& program, const PipelineParams& params,
                             int threads) {
  const auto raw = in_stage("forge", [&] {
    return semanticforge::forge(program, params.forge, semanticforge::ForgeOptions{threads});
  });
  const auto norm = in_stage("normalize", [&] { return semanticforge::normalize(raw); });
  auto map = in_stage("map", [&] { return semanticforge::to_feature_map(norm); });
  map = clahe::pad_to(map, params.clahe.grid_a, params.clahe.grid_b);
  const auto enhanced = in_stage("enhance", [&] {
    return clahe::enhance(map, params.clahe, clahe::EnhanceOptions{threads});
  });
  return in_stage("resize", [&] { return clahe::resize(enhanced, params.clahe.out_w, params.clahe.out_h); });
}

std::filesystem::path featurize(const FeaturizeRequest& request, const PipelineParams& params) {
  const Bytes sample = in_stage("load", [&] { return read_file(request.sample); });
  const std::string id = sha256_hex(sample);
  const auto program = in_stage("ingest", [&] {
    if (request.disassembly) {
      ingest::LoadOptions opts{params.include_imports};
      return ingest::load_disassembly(read_text_file(*request.disassembly), id, opts);
    }
    return ingest::raw_blocks(sample, params.raw_block_size, id);
  });
  const auto map = featurize_program(program, params);
  std::filesystem::create_directories(request.out_dir);
  const auto out = request.out_dir / (id + ".samp");
  in_stage("export", [&] {
    write_tensor(out, map);
    if (request.png) write_png(request.out_dir / (id + ".png"), map);
    return 0;
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_training_set(const std::vector<LabeledMap>& train, const FeatureMap& query) {
  if (train.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training maps");
  for (const auto& t : train) {
    if (t.map.width != query.width || t.map.height != query.height ||
        t.map.channels != query.channels) {
      throw Error(ErrorCode::ShapeMismatch, "training map '" + t.label + "' shape differs from query");
    }
  }
}

std::uint64_t squared_l2(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::int64_t d = static_cast<std::int64_t>(a[i]) - b[i];
    sum += static_cast<std::uint64_t>(d * d);
  }
  return sum;
}

}  // namespace

std::vector<std::uint64_t> knn_distances_serial(const std::vector<LabeledMap>& train,
                                                const FeatureMap& query) {
  check_training_set(train, query);
  std::vector<std::uint64_t> out;
  out.reserve(train.size());
  for (const auto& t : train) out.push_back(squared_l2(t.map.data, query.data));
  return out;
}

std::vector<std::uint64_t> knn_distances(const std::vector<LabeledMap>& train, const FeatureMap& query) {
  check_training_set(train, query);
  std::vector<std::uint64_t> out(train.size());
  const auto n = static_cast<std::ptrdiff_t>(train.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = squared_l2(train[static_cast<std::size_t>(i)].map.data, query.data);
  }
  return out;
}

std::string knn_classify(const std::vector<LabeledMap>& train, const FeatureMap& query, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  const auto dist = knn_distances(train, query);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t kk = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
                    });

  struct Vote {
    std::size_t count = 0;
    double distance = 0.0;
  };
  std::map<std::string, Vote> votes;
  for (std::size_t i = 0; i < kk; ++i) {
    auto& v = votes[train[order[i]].label];
    ++v.count;
    v.distance += std::sqrt(static_cast<double>(dist[order[i]]));
  }
  // std::map iterates labels in lexicographic order, so strict comparisons
  // keep the smallest label on full ties.
  const std::string* best = nullptr;
  Vote best_vote;
  for (const auto& [label, v] : votes) {
    if (best == nullptr || v.count > best_vote.count ||
        (v.count == best_vote.count && v.distance < best_vote.distance)) {
      best = &label;
      best_vote = v;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------

MetricsReport evaluate(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) throw Error(ErrorCode::InvalidArgument, "no predictions to evaluate");
  MetricsReport r;
  std::set<std::string> labels;
  for (const auto& p : predictions) {
    labels.insert(p.truth);
    labels.insert(p.predicted);
  }
  r.labels.assign(labels.begin(), labels.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < r.labels.size(); ++i) index[r.labels[i]] = i;

  const std::size_t n = r.labels.size();
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (const auto& p : predictions) ++r.confusion[index[p.truth]][index[p.predicted]];

  const auto total = static_cast<double>(predictions.size());
  std::size_t trace = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += r.confusion[i][j];
      col += r.confusion[j][i];
    }
    const std::size_t tp = r.confusion[i][i];
    const std::size_t fp = col - tp;
    const std::size_t fn = row - tp;
    const std::size_t tn = predictions.size() - tp - fp - fn;
    trace += tp;

    CategoryMetrics m;
    m.label = r.labels[i];
    m.support = row;
    m.never_predicted = col == 0;
    m.absent_from_truth = row == 0;
    m.precision = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    m.recall = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.accuracy = static_cast<double>(tp + tn) / total;
    r.per_category.push_back(m);
  }
  for (const auto& m : r.per_category) {
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.macro_accuracy += m.accuracy;
  }
  const auto k = static_cast<double>(n);
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  r.macro_accuracy /= k;
  r.accuracy = static_cast<double>(trace) / total;
  return r;
}

std::string metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(28) << "category" << std::right << std::setw(10) << "precision"
     << std::setw(10) << "recall" << std::setw(10) << "f1" << std::setw(10) << "accuracy"
     << std::setw(9) << "support" << "\n";
  for (const auto& m : r.per_category) {
    os << std::left << std::setw(28) << m.label << std::right << std::setw(10) << m.precision
       << std::setw(10) << m.recall << std::setw(10) << m.f1 << std::setw(10) << m.accuracy
       << std::setw(9) << m.support;
    if (m.never_predicted) os << "  (never predicted)";
    if (m.absent_from_truth) os << "  (not in truth)";
    os << "\n";
  }
  os << std::left << std::setw(28) << "macro" << std::right << std::setw(10) << r.macro_precision
     << std::setw(10) << r.macro_recall << std::setw(10) << r.macro_f1 << std::setw(10)
     << r.macro_accuracy << "\n";
  os << "overall accuracy: " << r.accuracy << "\n";
  return os.str();
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::json j;
  j["labels"] = r.labels;
  j["confusion"] = r.confusion;
  for (const auto& m : r.per_category) {
    j["per_category"].push_back({{"label", m.label},
                                 {"precision", m.precision},
                                 {"recall", m.recall},
                                 {"f1", m.f1},
                                 {"accuracy", m.accuracy},
                                 {"support", m.support},
                                 {"never_predicted", m.never_predicted},
                                 {"absent_from_truth", m.absent_from_truth}});
  }
  j["macro"] = {{"precision", r.macro_precision},
                {"recall", r.macro_recall},
                {"f1", r.macro_f1},
                {"accuracy", r.macro_accuracy}};
  j["accuracy"] = r.accuracy;
  j["avg_time"] = r.avg_time;
  j["storage_bytes"] = r.storage_bytes;
  j["corpus_bytes"] = r.corpus_bytes;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::optional<Stage> parse_stage(std::string_view name) {
  if (name == "ingest") return Stage::ingest;
  if (name == "forge") return Stage::forge;
  if (name == "map") return Stage::map;
  if (name == "enhance") return Stage::enhance;
  if (name == "resize") return Stage::resize;
  return std::nullopt;
}

BenchReport summarize(std::size_t num_files, double total_seconds, std::uint64_t storage_bytes,
                      std::uint64_t corpus_bytes) {
  BenchReport r;
  r.num_files = num_files;
  r.total_seconds = total_seconds;
  r.avg_time = num_files == 0 ? 0.0 : total_seconds / static_cast<double>(num_files);
  r.storage_bytes = storage_bytes;
  r.corpus_bytes = corpus_bytes;
  r.storage_ratio = corpus_bytes == 0 ? 0.0 : static_cast<double>(storage_bytes) / static_cast<double>(corpus_bytes);
  return r;
}

namespace {

struct FileOutcome {
  std::uint64_t input_bytes = 0;
  std::uint64_t tensor_bytes = 0;
};

FileOutcome run_stages(const std::filesystem::path& path, std::optional<Stage> last,
                       const PipelineParams& params) {
  FileOutcome out;
  const Bytes bytes = read_file(path);
  out.input_bytes = bytes.size();
  if (!last) return out;

  const auto sidecar = std::filesystem::path(path.string() + ".dis");
  const auto program = in_stage("ingest", [&] {
    if (std::filesystem::exists(sidecar)) {
      return ingest::load_disassembly(read_text_file(sidecar), sha256_hex(bytes),
                                      ingest::LoadOptions{params.include_imports});
    }
    return ingest::raw_blocks(bytes, params.raw_block_size);
  });
  if (*last == Stage::ingest) return out;

  const auto raw = in_stage("forge", [&] {
    return semanticforge::forge(program, params.forge, semanticforge::ForgeOptions{1});
  });
  if (*last == Stage::forge) return out;

  auto map = in_stage("map", [&] { return semanticforge::to_feature_map(semanticforge::normalize(raw)); });
  if (*last == Stage::map) {
    out.tensor_bytes = kTensorHeaderSize + map.data.size();
    return out;
  }
  map = clahe::pad_to(map, params.clahe.grid_a, params.clahe.grid_b);
  map = in_stage("enhance", [&] { return clahe::enhance(map, params.clahe, clahe::EnhanceOptions{1}); });
  if (*last == Stage::resize) {
    map = in_stage("resize", [&] { return clahe::resize(map, params.clahe.out_w, params.clahe.out_h); });
  }
  out.tensor_bytes = kTensorHeaderSize + map.data.size();
  return out;
}

}  // namespace

BenchReport bench(const std::vector<std::filesystem::path>& paths, const std::set<Stage>& stages,
                  const PipelineParams& params, int threads) {
  if (paths.empty()) throw Error(ErrorCode::InvalidArgument, "bench needs at least one path");
  const std::optional<Stage> last =
      stages.empty() ? std::nullopt : std::optional<Stage>(*stages.rbegin());

  std::vector<FileOutcome> outcomes(paths.size());
  std::vector<std::exception_ptr> errors(paths.size());
  const int team = threads > 0 ? threads : omp_get_max_threads();
  const auto n = static_cast<std::ptrdiff_t>(paths.size());

  const auto start = std::chrono::steady_clock::now();
#pragma omp parallel for schedule(dynamic) num_threads(team)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      outcomes[idx] = run_stages(paths[idx], last, params);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  const auto stop = std::chrono::steady_clock::now();

  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::uint64_t storage = 0, corpus = 0;
  for (const auto& o : outcomes) {
    storage += o.tensor_bytes;
    corpus += o.input_bytes;
  }
  return summarize(paths.size(), std::chrono::duration<double>(stop - start).count(), storage, corpus);
}

std::string bench_json(const BenchReport& r) {
  nlohmann::json j{{"num_files", r.num_files},         {"total_seconds", r.total_seconds},
                   {"avg_time", r.avg_time},           {"storage_bytes", r.storage_bytes},
                   {"corpus_bytes", r.corpus_bytes},   {"storage_ratio", r.storage_ratio}};
  return j.dump(2);
}

}  // namespace visunpack::pipeline
