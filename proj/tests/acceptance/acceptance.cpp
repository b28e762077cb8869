// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Tolerances are fixed below and never adjusted at runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "visunpack/clahe.hpp"
#include "visunpack/hash.hpp"
#include "visunpack/labelrefiner.hpp"
#include "visunpack/packerid.hpp"
#include "visunpack/pipeline.hpp"
#include "visunpack/semanticforge.hpp"
#include "visunpack/synthetic.hpp"

using namespace visunpack;

namespace {

constexpr double kDescriptorBudget = 10.0;
constexpr double kClaheBudget = 30.0;
constexpr double kClassificationBudget = 300.0;
constexpr double kMinAccuracy = 0.95;
constexpr double kKappaTarget = 0.78;
constexpr double kKappaTolerance = 0.02;
constexpr int kKappaItems = 20;
constexpr int kKappaFirstAgreements = 15;
constexpr std::uint64_t kMaxStoragePercent = 3;

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Accumulates failures; the first few mismatches go into the detail text.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    pass_ = false;
    if (++failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string detail) const {
    if (!pass_) detail += " | failures=" + std::to_string(failures_) + ": " + notes_;
    return {pass_, std::move(detail)};
  }

 private:
  bool pass_ = true;
  int failures_ = 0;
  std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

Outcome descriptor_oracle() {
  using namespace semanticforge;
  const auto t0 = std::chrono::steady_clock::now();
  Check check;
  std::mt19937_64 rng(2001);
  std::size_t compared = 0;
  for (int i = 0; i < 100; ++i) {
    ForgeParams p;
    const std::size_t len = 16 + rng() % 120;
    Bytes block = testsupport::random_bytes(rng, len);
    if (i % 2 == 0) {
      for (auto& b : block) b %= 4;
    }
    const oracle::DescriptorSpec spec{p.unit_len, p.region_len, p.angular_bins, p.radial_bins, p.byte_scale};
    for (std::size_t c = 0; c + p.unit_len <= len; c += p.unit_len) {
      const auto o = oracle::descriptor(block, c, spec);
      if (!o.ok) continue;
      check.expect(descriptor_at(block, c, p).values == o.values,
                   "block " + std::to_string(i) + " center " + std::to_string(c));
      ++compared;
    }
  }
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto program = synthetic::family_seed(seed);
    const ForgeParams p;
    const auto serial = forge_serial(program, p);
    check.expect(forge(program, p, {1}) == serial, "forge 1 thread");
    check.expect(forge(program, p, {8}) == serial, "forge 8 threads");
  }
  const double elapsed = seconds_since(t0);
  check.expect(elapsed < kDescriptorBudget, "runtime " + fmt(elapsed) + " s");
  return check.done(std::to_string(compared) + " descriptors on 100 blocks, 1 vs 8 threads, " + fmt(elapsed, 2) +
                    " s < " + fmt(kDescriptorBudget, 0) + " s");
}

Outcome clahe_reduction() {
  using namespace clahe;
  const auto t0 = std::chrono::steady_clock::now();
  Check check;
  std::mt19937_64 rng(2002);
  ClaheParams flat;
  flat.grid_a = 1;
  flat.grid_b = 1;
  flat.clip = 1e12;
  for (int i = 0; i < 20; ++i) {
    FeatureMap m(64, 64, 3);
    const auto span = 1 + rng() % 256;
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng() % span);
    check.expect(enhance(m, flat) == oracle::plain_equalization(m), "map " + std::to_string(i));
  }
  for (int i = 0; i < 1000; ++i) {
    Counts hist(256, 0);
    const std::uint64_t area = 1 + rng() % 5000;
    const auto spread = 1 + rng() % 256;
    for (std::uint64_t k = 0; k < area; ++k) ++hist[rng() % spread];
    const double clip = 1.0 + static_cast<double>(rng() % 800) / 100.0;
    const auto out = clip_histogram(hist, clip, area, 256);
    std::uint64_t total = 0;
    for (auto v : out) total += v;
    check.expect(total == area, "histogram " + std::to_string(i));
  }
  const double elapsed = seconds_since(t0);
  check.expect(elapsed < kClaheBudget, "runtime " + fmt(elapsed) + " s");
  return check.done("20 maps cell-exact, 1000 histograms count-exact, " + fmt(elapsed, 2) + " s < " +
                    fmt(kClaheBudget, 0) + " s");
}

Outcome interpolation_spots() {
  using namespace clahe;
  Check check;
  std::mt19937_64 rng(2003);
  int centers = 0, edges = 0;
  for (int trial = 0; trial < 10; ++trial) {
    FeatureMap m(64, 64, 3);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng());
    const ClaheParams p;
    const auto out = enhance(m, p);
    const auto tiles = tile_transforms(m, p);
    for (std::uint32_t ch = 0; ch < 3; ++ch) {
      const auto& t = tiles[ch];
      for (std::uint32_t r = 0; r < 8; ++r) {
        for (std::uint32_t c = 0; c < 8; ++c) {
          const std::uint32_t y = 8 * r + 4, x = 8 * c + 4;
          check.expect(out.at(y, x, ch) == t[r * 8 + c].mapping[m.at(y, x, ch)], "center");
          ++centers;
        }
      }
      for (std::uint32_t k = 0; k + 1 < 8; ++k) {
        const std::uint32_t mid = 8 * k + 8;
        const int top_a = t[k].mapping[m.at(0, mid, ch)], top_b = t[k + 1].mapping[m.at(0, mid, ch)];
        check.expect(std::abs(out.at(0, mid, ch) - (top_a + top_b) / 2.0) <= 1.0, "top edge");
        const int left_a = t[k * 8].mapping[m.at(mid, 0, ch)];
        const int left_b = t[(k + 1) * 8].mapping[m.at(mid, 0, ch)];
        check.expect(std::abs(out.at(mid, 0, ch) - (left_a + left_b) / 2.0) <= 1.0, "left edge");
        edges += 2;
      }
    }
  }
  return check.done(std::to_string(centers) + " tile centers exact, " + std::to_string(edges) +
                    " edge midpoints within 1");
}

Outcome shift_invariance() {
  using namespace semanticforge;
  Check check;
  ForgeParams p;
  p.region_len = 21;
  const Bytes core{0x90, 0x10, 0x20, 0x41, 0x42, 0x43, 0x30, 0x50, 0x60};
  std::vector<double> first;
  for (const std::size_t at : {0, 1, 2, 3, 15, 16, 17, 18}) {
    Bytes block(21, 0xF0);
    std::copy(core.begin(), core.end(), block.begin() + 6);
    block[at] = 0x41;
    block[at + 1] = 0x42;
    block[at + 2] = 0x43;
    const auto d = descriptor_at(block, 9, p).values;
    check.expect(d[2] == 1.0, "outer bin at " + std::to_string(at));
    if (first.empty()) first = d;
    check.expect(d == first, "shift to " + std::to_string(at));
  }
  return check.done("copy moved over 8 positions of the outer bin, descriptor unchanged");
}

// ---------------------------------------------------------------------------

struct ExperimentResult {
  double accuracy = 0.0;
  double macro_accuracy = 0.0;
  std::size_t test_count = 0;
};

ExperimentResult family_experiment(std::uint64_t seed, double mutation_rate) {
  constexpr int kFamilies = 6;
  constexpr int kVariants = 25;
  const PipelineParams params;
  std::vector<pipeline::SampleInput> inputs;
  std::map<std::string, FeatureMap> maps;
  for (int f = 0; f < kFamilies; ++f) {
    const auto base = synthetic::family_seed(seed * 1000 + static_cast<std::uint64_t>(f));
    const std::string label = "family" + std::to_string(f);
    for (int v = 0; v < kVariants; ++v) {
      const auto variant =
          synthetic::make_variant(base, mutation_rate, 2, seed * 100000 + static_cast<std::uint64_t>(f * 100 + v));
      maps[variant.sample_id] = pipeline::featurize_program(variant, params);
      inputs.push_back({variant.sample_id, label, false, variant.sample_id});
    }
  }
  const auto manifest = pipeline::build_manifest(inputs, 0.9, seed);
  std::vector<pipeline::LabeledMap> train;
  for (const auto& e : manifest.entries) {
    if (e.split == pipeline::Split::train) train.push_back({maps.at(e.sample_id), e.label});
  }
  std::vector<pipeline::Prediction> predictions;
  for (const auto& e : manifest.entries) {
    if (e.split == pipeline::Split::test) {
      predictions.push_back({e.label, pipeline::knn_classify(train, maps.at(e.sample_id), 1)});
    }
  }
  const auto report = pipeline::evaluate(predictions);
  return {report.accuracy, report.macro_accuracy, predictions.size()};
}

Outcome synthetic_classification() {
  const auto t0 = std::chrono::steady_clock::now();
  Check check;
  const auto base = family_experiment(1, 0.02);
  check.expect(base.accuracy >= kMinAccuracy, "accuracy " + fmt(base.accuracy));
  check.expect(base.macro_accuracy >= kMinAccuracy, "macro accuracy " + fmt(base.macro_accuracy));

  const std::vector<double> rates{0.02, 0.04, 0.06, 0.08, 0.10};
  std::vector<double> mean(rates.size(), 0.0);
  for (std::size_t r = 0; r < rates.size(); ++r) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) mean[r] += family_experiment(seed, rates[r]).accuracy / 5.0;
  }
  std::string curve;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    curve += (r ? " " : "") + fmt(rates[r], 2) + ":" + fmt(mean[r], 3);
    if (r > 0) check.expect(mean[r] <= mean[r - 1], "mean accuracy rose at rate " + fmt(rates[r], 2));
  }
  const double elapsed = seconds_since(t0);
  check.expect(elapsed < kClassificationBudget, "runtime " + fmt(elapsed) + " s");
  return check.done("accuracy " + fmt(base.accuracy, 3) + " macro " + fmt(base.macro_accuracy, 3) + " on " +
                    std::to_string(base.test_count) + " held-out >= " + fmt(kMinAccuracy, 2) +
                    "; mean accuracy by mutation rate [" + curve + "] non-increasing; " + fmt(elapsed, 1) + " s");
}

Outcome space_savings() {
  Check check;
  testsupport::TempDir dir("acceptance-space");
  constexpr std::size_t kFiles = 4;
  constexpr std::size_t kFileSize = 8u << 20;
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < kFiles; ++i) {
    const auto program = synthetic::family_seed(3000 + i);
    const auto path = dir / ("sample" + std::to_string(i) + ".exe");
    write_file(path, synthetic::make_pe(program, kFileSize, i));
    write_text(std::filesystem::path(path.string() + ".dis"), ingest::serialize(program));
    paths.push_back(path);
  }
  using pipeline::Stage;
  const auto report = pipeline::bench(
      paths, {Stage::ingest, Stage::forge, Stage::map, Stage::enhance, Stage::resize}, PipelineParams{});
  const double mean_mb = static_cast<double>(report.corpus_bytes) / kFiles / 1e6;
  check.expect(mean_mb >= 1.0, "mean file size " + fmt(mean_mb) + " MB");
  check.expect(report.storage_bytes * 100 <= kMaxStoragePercent * report.corpus_bytes,
               "ratio " + fmt(report.storage_ratio, 6));
  return check.done(std::to_string(report.storage_bytes) + " tensor bytes / " +
                    std::to_string(report.corpus_bytes) + " corpus bytes = " + fmt(report.storage_ratio, 6) +
                    " <= 0.03 (mean file " + fmt(mean_mb, 2) + " MB)");
}

Outcome label_refiner() {
  using namespace labelrefiner;
  Check check;
  const auto params = RefinerParams::defaults();
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(testsupport::fixtures_dir() / "labels")) {
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabelRecord> corpus;
  for (const auto& f : files) corpus.push_back(parse_vendor_report(read_text_file(f)));
  const auto result = refine(corpus, params);
  std::string got = "missing";
  for (const auto& l : result.labels) {
    if (l.sample_id.rfind("a6e197b2", 0) == 0) {
      got = l.label();
      check.expect(l.class_token == "trojan", "class " + l.class_token);
      check.expect(l.family_token == "swisyn", "family " + l.family_token);
    }
  }
  check.expect(got != "missing", "a6e197b2 not refined");

  const auto ransom = merge_tokens({{"ransom", 3}, {"ransomgen", 1}, {"ransomkd", 1}}, params);
  check.expect(ransom.at("ransomgen") == "ransom" && ransom.at("ransomkd") == "ransom" &&
                   ransom.at("ransom") == "ransom",
               "ransom tokens not merged");
  const auto pua = merge_tokens({{"pua", 2}, {"pup", 2}}, params);
  check.expect(pua.at("pup") == pua.at("pua"), "pua/pup not merged");
  return check.done("a6e197b2 -> " + got + "; ransomgen, ransomkd -> " + ransom.at("ransomgen") + "; pup -> " +
                    pua.at("pup"));
}

Outcome kappa() {
  Check check;
  const double two_by_two = labelrefiner::cohens_kappa({"x", "x", "y", "y"}, {"x", "y", "x", "y"});
  check.expect(two_by_two == 0.0, "2x2 example " + fmt(two_by_two, 6));

  int agreements = kKappaFirstAgreements;
  oracle::KappaSearch found;
  for (; agreements <= kKappaItems; ++agreements) {
    found = oracle::search_kappa(kKappaItems, kKappaTarget, agreements);
    if (std::abs(found.kappa - kKappaTarget) <= kKappaTolerance) break;
  }
  const auto [a, b] = oracle::vectors_from_table(found.table);
  const double k = labelrefiner::cohens_kappa(a, b);
  check.expect(a.size() == static_cast<std::size_t>(kKappaItems), "vector length");
  check.expect(std::abs(k - kKappaTarget) <= kKappaTolerance, "kappa " + fmt(k, 6));
  return check.done("2x2 example = " + fmt(two_by_two, 1) + "; " + std::to_string(kKappaItems) + " items with " +
                    std::to_string(agreements) + " agreements -> kappa " + fmt(k, 5) + " (target " +
                    fmt(kKappaTarget, 2) + " +/- " + fmt(kKappaTolerance, 2) + ")");
}

Outcome packer_id() {
  using namespace packerid;
  Check check;
  std::mt19937_64 rng(2009);
  const auto db = load_signature_db("UPX 2.x = 60 BE ?? ?? ?? ?? 8D BE (ep_only)");
  int trials = 0;
  for (; trials < 50; ++trials) {
    PeLayout l;
    l.sections.push_back({".text", 0x400, 0x800, 0x1000, 0x800});
    l.sections.push_back({".data", 0xC00, 0x400, 0x2000, 0x400});
    l.entry_point_rva = 0x1000 + static_cast<std::uint32_t>(rng() % 0x7F0);
    Bytes image = build_pe(l);
    for (std::size_t i = 0x400; i < image.size(); ++i) image[i] = static_cast<std::uint8_t>(rng());
    const auto layout = parse_pe(image);
    const std::size_t ep = *layout.rva_to_offset(layout.entry_point_rva);
    const Bytes stub{0x60, 0xBE, 0x11, 0x22, 0x33, 0x44, 0x8D, 0xBE};
    std::copy(stub.begin(), stub.end(), image.begin() + static_cast<std::ptrdiff_t>(ep));
    const auto id = identify_packer(image, layout, db);
    check.expect(id.matches.size() == 1 && id.matches[0].offset == ep, "trial " + std::to_string(trials));

    auto anywhere = db[0];
    anywhere.ep_only = false;
    std::vector<std::size_t> expected;
    for (const auto& s : layout.sections) {
      const auto h = oracle::naive_scan(image, s.raw_offset, s.raw_offset + s.raw_size, anywhere);
      expected.insert(expected.end(), h.begin(), h.end());
    }
    check.expect(std::find(expected.begin(), expected.end(), ep) != expected.end(), "oracle misses entry");
    const std::vector<PackerSignature> anywhere_db{anywhere};
    std::vector<std::size_t> found;
    for (const auto& m : identify_packer(image, layout, anywhere_db).matches) found.push_back(m.offset);
    std::sort(found.begin(), found.end());
    std::sort(expected.begin(), expected.end());
    check.expect(found == expected, "scan differs from oracle");
  }

  testsupport::TempDir dir("acceptance-unpack");
  const auto input = dir / "sample.exe";
  write_file(input, build_pe(PeLayout{0x1000, {{".text", 0x200, 0x200, 0x1000, 0x200}}, ImageKind::pe32}));
  const UnpackPlan good{"UPX", "sh -c 'cp \"$0\" \"$1\" && printf x >> \"$1\"' {in} {out}", 10};
  const UnpackPlan silent{"UPX", "true {in} {out}", 10};
  const UnpackPlan sleepy{"UPX", "sleep 30; true {in} {out}", 1};
  auto code_of = [](const std::function<void()>& f) -> std::string {
    try {
      f();
    } catch (const Error& e) {
      return std::string(to_string(e.code()));
    }
    return "ok";
  };
  const auto out = unpack(input, good);
  check.expect(std::filesystem::exists(out) && sha256_hex(read_file(out)) != sha256_hex(read_file(input)),
               "success flow");
  check.expect(code_of([&] { unpack(input, silent, dir / "silent.out"); }) == "UnpackFailed", "failure flow");
  const auto t0 = std::chrono::steady_clock::now();
  const auto timeout_code = code_of([&] { unpack(input, sleepy, dir / "sleepy.out"); });
  const double waited = seconds_since(t0);
  check.expect(timeout_code == "CommandFailed" && waited < 10.0, "timeout flow " + timeout_code);
  return check.done(std::to_string(trials) + " injections found at the entry point only, oracle-equal scans; "
                    "unpack success / UnpackFailed / timeout after " + fmt(waited, 2) + " s");
}

Outcome bench_avg_time() {
  Check check;
  testsupport::TempDir dir("acceptance-bench");
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < 10; ++i) {
    const auto program = synthetic::family_seed(4000 + static_cast<std::uint64_t>(i));
    const auto path = dir / ("f" + std::to_string(i) + ".exe");
    write_file(path, synthetic::make_pe(program, 16384, static_cast<std::uint64_t>(i)));
    write_text(std::filesystem::path(path.string() + ".dis"), ingest::serialize(program));
    paths.push_back(path);
  }
  using pipeline::Stage;
  const auto r = pipeline::bench(paths, {Stage::ingest, Stage::forge, Stage::map, Stage::enhance, Stage::resize},
                                 PipelineParams{});
  const double resolution =
      static_cast<double>(std::chrono::steady_clock::period::num) / std::chrono::steady_clock::period::den;
  check.expect(r.num_files == 10, "num_files");
  check.expect(r.total_seconds > 0.0, "total_seconds");
  check.expect(std::abs(r.avg_time - r.total_seconds / 10.0) <= resolution, "avg_time");
  return check.done("avg_time " + fmt(r.avg_time, 6) + " s = " + fmt(r.total_seconds, 6) + " s / " +
                    std::to_string(r.num_files) + " (clock resolution " + fmt(resolution * 1e9, 0) + " ns)");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"descriptor-oracle", descriptor_oracle},
      {"clahe-reduction", clahe_reduction},
      {"interpolation-spot-checks", interpolation_spots},
      {"in-bin-shift-invariance", shift_invariance},
      {"synthetic-family-classification", synthetic_classification},
      {"space-savings", space_savings},
      {"label-refiner", label_refiner},
      {"kappa", kappa},
      {"packer-id", packer_id},
      {"bench-avg-time", bench_avg_time},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
