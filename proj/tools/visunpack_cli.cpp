// visunpack command-line front end.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "visunpack/error.hpp"
#include "visunpack/hash.hpp"
#include "visunpack/ingest.hpp"
#include "visunpack/labelrefiner.hpp"
#include "visunpack/packerid.hpp"
#include "visunpack/params.hpp"
#include "visunpack/pipeline.hpp"

namespace fs = std::filesystem;
using namespace visunpack;

namespace {

struct Global {
  std::string params_path;
  int threads = 0;

  PipelineParams params() const { return params_path.empty() ? PipelineParams{} : load_params(params_path); }
};

void write_or_print(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  write_file(out_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

std::vector<fs::path> expand(const std::vector<std::string>& inputs, const std::string& extension) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && (extension.empty() || e.path().extension() == extension)) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void add_identify(CLI::App& app) {
  auto* cmd = app.add_subcommand("identify", "Match packer signatures against a PE file");
  static std::string file, db_path;
  static bool as_json = false;
  cmd->add_option("file", file, "PE file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--db", db_path, "Signature database")->required()->check(CLI::ExistingFile);
  cmd->add_flag("--json", as_json, "Print JSON");
  cmd->callback([] {
    const auto bytes = read_file(file);
    const auto db = packerid::load_signature_db(read_text_file(db_path));
    const auto id = packerid::identify_packer(bytes, packerid::parse_pe(bytes), db);
    if (as_json) {
      nlohmann::json j;
      j["matches"] = nlohmann::json::array();
      for (const auto& m : id.matches) {
        j["matches"].push_back({{"name", m.name}, {"offset", m.offset}, {"ep_only", m.ep_only},
                                {"pattern_length", m.pattern_length}});
      }
      j["diagnostics"] = id.diagnostics;
      std::cout << j.dump(2) << "\n";
      return;
    }
    for (const auto& d : id.diagnostics) std::cerr << "note: " << d << "\n";
    if (id.matches.empty()) std::cout << "no packer signature matched\n";
    for (const auto& m : id.matches) {
      std::cout << m.name << "\t0x" << std::hex << m.offset << std::dec << (m.ep_only ? "\tep_only" : "") << "\n";
    }
  });
}

void add_unpack(CLI::App& app) {
  auto* cmd = app.add_subcommand("unpack", "Run configured unpackers until one succeeds");
  static std::string file, plans_path, db_path, packer, output;
  cmd->add_option("file", file, "Packed PE file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--plans", plans_path, "Unpack plan JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--db", db_path, "Signature database used to name the packer")->check(CLI::ExistingFile);
  cmd->add_option("--packer", packer, "Packer name (skips identification)");
  cmd->add_option("-o,--output", output, "Output path (default: <file>.unpacked)");
  cmd->callback([] {
    if (packer.empty() && !db_path.empty()) {
      const auto bytes = read_file(file);
      const auto id = packerid::identify_packer(bytes, packerid::parse_pe(bytes),
                                                packerid::load_signature_db(read_text_file(db_path)));
      if (!id.matches.empty()) packer = id.matches.front().name;
    }
    const auto all = packerid::load_unpack_plans(read_text_file(plans_path));
    const auto plans = packerid::select_plans(packer, all);
    if (plans.empty()) {
      throw visunpack::Error(visunpack::ErrorCode::InvalidArgument, "no unpack plan applies to '" + packer + "'");
    }
    const auto outcome = packerid::unpack_with_fallback(
        file, plans, output.empty() ? std::nullopt : std::optional<fs::path>(output));
    for (const auto& f : outcome.failures) std::cerr << "attempt failed: " << f << "\n";
    std::cout << outcome.output.string() << "\t" << outcome.plan_used << "\n";
  });
}

void add_ingest(CLI::App& app, const Global& global) {
  auto* cmd = app.add_subcommand("ingest", "Load a disassembly document and print program metadata");
  static std::string doc, raw, sample_id, dump;
  cmd->add_option("document", doc, "Interchange document")->check(CLI::ExistingFile);
  cmd->add_option("--raw", raw, "Cut a raw file into pseudo-blocks instead")->check(CLI::ExistingFile);
  cmd->add_option("--sample-id", sample_id, "Sample id (default: SHA-256 of the input)");
  cmd->add_option("--dump", dump, "Write the canonical interchange form here");
  cmd->callback([&global] {
    const auto params = global.params();
    ingest::ProgramDisassembly p;
    if (!raw.empty()) {
      const auto bytes = read_file(raw);
      p = ingest::raw_blocks(bytes, params.raw_block_size, sample_id.empty() ? sha256_hex(bytes) : sample_id);
    } else if (!doc.empty()) {
      p = ingest::load_disassembly(read_text_file(doc), sample_id, {params.include_imports});
    } else {
      throw CLI::ValidationError("ingest", "give a document or --raw");
    }
    nlohmann::json j{{"sample_id", p.sample_id},
                     {"functions", p.functions.size()},
                     {"blocks", p.block_count()},
                     {"instructions", p.instruction_count},
                     {"instruction_bytes", p.instruction_bytes},
                     {"avg_instr", p.avg_instr},
                     {"avg_bb", p.avg_bb}};
    std::cout << j.dump(2) << "\n";
    if (!dump.empty()) write_or_print(dump, ingest::serialize(p));
  });
}

void add_featurize(CLI::App& app, const Global& global) {
  auto* cmd = app.add_subcommand("featurize", "Write the feature tensor of one or more samples");
  static std::vector<std::string> samples;
  static std::string disassembly, out_dir = ".";
  static bool png = false;
  cmd->add_option("samples", samples, "Sample files")->required()->check(CLI::ExistingFile);
  cmd->add_option("--disassembly", disassembly,
                  "Interchange document (single sample; default: <sample>.dis when present)");
  cmd->add_option("-o,--out-dir", out_dir, "Output directory");
  cmd->add_flag("--png", png, "Also write a PNG preview");
  cmd->callback([&global] {
    const auto params = global.params();
    if (!disassembly.empty() && samples.size() != 1) {
      throw CLI::ValidationError("--disassembly", "only with a single sample");
    }
    for (const auto& s : samples) {
      pipeline::FeaturizeRequest req{s, std::nullopt, out_dir, png};
      if (!disassembly.empty()) {
        req.disassembly = disassembly;
      } else if (fs::exists(s + ".dis")) {
        req.disassembly = s + ".dis";
      }
      std::cout << pipeline::featurize(req, params).string() << "\n";
    }
  });
}

void add_refine(CLI::App& app, const Global& global) {
  auto* cmd = app.add_subcommand("refine-labels", "Turn vendor reports into class.family labels");
  static std::vector<std::string> inputs;
  static std::string output;
  cmd->add_option("reports", inputs, "Vendor report files or directories of .json")->required();
  cmd->add_option("-o,--output", output, "Output TSV (default: stdout)");
  cmd->callback([&global] {
    const auto params = global.params();
    std::vector<labelrefiner::LabelRecord> records;
    for (const auto& f : expand(inputs, ".json")) {
      records.push_back(labelrefiner::parse_vendor_report(read_text_file(f)));
    }
    const auto result = labelrefiner::refine(records, params.refiner);
    for (const auto& id : result.manual_review) std::cerr << "manual review: " << id << "\n";
    write_or_print(output, labelrefiner::format_refined(result.labels));
  });
}

void add_manifest(CLI::App& app) {
  auto* cmd = app.add_subcommand("manifest", "Split labelled samples into a train/test manifest");
  static std::string input, output;
  static double fraction = 0.9;
  static std::uint64_t seed = 1;
  cmd->add_option("input", input, "TSV lines: path<TAB>label[<TAB>packed 0|1][<TAB>sample_id]")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--fraction", fraction, "Train fraction per category")->capture_default_str();
  cmd->add_option("--seed", seed, "Shuffle seed")->capture_default_str();
  cmd->add_option("-o,--output", output, "Manifest path (default: stdout)");
  cmd->callback([] {
    std::ifstream in(input);
    std::vector<pipeline::SampleInput> samples;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto f = split_tabs(line);
      if (f.size() < 2) throw visunpack::Error(visunpack::ErrorCode::ParseError, "sample list needs path and label: " + line);
      samples.push_back({f[0], f[1], f.size() > 2 && f[2] == "1", f.size() > 3 ? f[3] : ""});
    }
    const auto m = pipeline::build_manifest(samples, fraction, seed);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
    write_or_print(output, pipeline::format_manifest(m));
  });
}

void add_classify(CLI::App& app) {
  auto* cmd = app.add_subcommand("classify-knn", "Nearest-neighbour baseline over a manifest");
  static std::string manifest, tensors, output;
  static std::size_t k = 1;
  cmd->add_option("--manifest", manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--tensors", tensors, "Directory of <sample_id>.samp files")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("-k", k, "Neighbours")->capture_default_str();
  cmd->add_option("-o,--output", output, "Predictions TSV (default: stdout)");
  cmd->callback([] {
    const auto m = pipeline::parse_manifest(read_text_file(manifest));
    auto tensor_of = [](const std::string& id) { return read_tensor(fs::path(tensors) / (id + ".samp")); };
    std::vector<pipeline::LabeledMap> train;
    for (const auto& e : m.entries) {
      if (e.split == pipeline::Split::train) train.push_back({tensor_of(e.sample_id), e.label});
    }
    std::ostringstream os;
    os << "#sample_id\ttruth\tpredicted\n";
    for (const auto& e : m.entries) {
      if (e.split != pipeline::Split::test) continue;
      os << e.sample_id << "\t" << e.label << "\t" << pipeline::knn_classify(train, tensor_of(e.sample_id), k)
         << "\n";
    }
    write_or_print(output, os.str());
  });
}

void add_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Metrics from a predictions TSV");
  static std::string predictions, json_out;
  cmd->add_option("predictions", predictions, "TSV: sample_id<TAB>truth<TAB>predicted")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--json", json_out, "Also write the metrics document here");
  cmd->callback([] {
    std::ifstream in(predictions);
    std::vector<pipeline::Prediction> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto f = split_tabs(line);
      if (f.size() != 3) throw visunpack::Error(visunpack::ErrorCode::ParseError, "predictions need 3 fields: " + line);
      rows.push_back({f[1], f[2]});
    }
    const auto report = pipeline::evaluate(rows);
    std::cout << pipeline::metrics_table(report);
    if (!json_out.empty()) write_or_print(json_out, pipeline::metrics_json(report) + "\n");
  });
}

void add_bench(CLI::App& app, const Global& global) {
  auto* cmd = app.add_subcommand("bench", "Time a stage prefix over a set of files");
  static std::vector<std::string> inputs;
  static std::vector<std::string> stage_names{"ingest", "forge", "map", "enhance", "resize"};
  cmd->add_option("files", inputs, "Files or directories")->required();
  cmd->add_option("--stages", stage_names, "Stages to time (empty for load only)")->delimiter(',');
  cmd->callback([&global] {
    std::set<pipeline::Stage> stages;
    for (const auto& s : stage_names) {
      if (s.empty() || s == "none") continue;
      const auto st = pipeline::parse_stage(s);
      if (!st) throw CLI::ValidationError("--stages", "unknown stage '" + s + "'");
      stages.insert(*st);
    }
    std::vector<fs::path> files;
    for (const auto& p : expand(inputs, "")) {
      if (p.extension() != ".dis") files.push_back(p);
    }
    const auto r = pipeline::bench(files, stages, global.params(), global.threads);
    std::cout << pipeline::bench_json(r) << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visunpack: packer identification, disassembly featurization and label refinement"};
  app.require_subcommand(1);
  Global global;
  app.add_option("--params", global.params_path, "Parameter JSON")->check(CLI::ExistingFile);
  app.add_option("--threads", global.threads, "Worker threads (0: runtime default)");

  add_identify(app);
  add_unpack(app);
  add_ingest(app, global);
  add_featurize(app, global);
  add_refine(app, global);
  add_manifest(app);
  add_classify(app);
  add_eval(app);
  add_bench(app, global);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const visunpack::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
