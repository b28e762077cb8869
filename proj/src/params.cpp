#include "visunpack/params.hpp"

#include <nlohmann/json.hpp>
#include <set>

#include "visunpack/error.hpp"
#include "visunpack/hash.hpp"

namespace visunpack {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::ParseError, "params: unknown key " + section + "." + key);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

}  // namespace

void PipelineParams::validate() const {
  forge.validate();
  clahe.validate();
  refiner.validate();
  if (raw_block_size < 3) throw Error(ErrorCode::InvalidArgument, "raw_block_size must be >= 3");
}

PipelineParams parse_params(std::string_view json_text) {
  PipelineParams p;
  try {
    const json doc = json::parse(json_text);
    if (!doc.is_object()) throw Error(ErrorCode::ParseError, "params: expected an object");
    reject_unknown(doc, "", {"forge", "clahe", "refiner", "ingest"});

    if (doc.contains("forge")) {
      const auto& f = doc["forge"];
      reject_unknown(f, "forge", {"unit_len", "region_len", "angular_bins", "radial_bins",
                                  "block_stride", "byte_scale", "placement"});
      read(f, "unit_len", p.forge.unit_len);
      read(f, "region_len", p.forge.region_len);
      read(f, "angular_bins", p.forge.angular_bins);
      read(f, "radial_bins", p.forge.radial_bins);
      read(f, "block_stride", p.forge.block_stride);
      read(f, "byte_scale", p.forge.byte_scale);
      if (f.contains("placement")) {
        const auto s = f["placement"].get<std::string>();
        if (s == "unit") {
          p.forge.placement = semanticforge::CenterPlacement::unit_aligned;
        } else if (s == "instruction") {
          p.forge.placement = semanticforge::CenterPlacement::instruction_aligned;
        } else {
          throw Error(ErrorCode::ParseError, "params: forge.placement must be 'unit' or 'instruction'");
        }
      }
    }
    if (doc.contains("clahe")) {
      const auto& c = doc["clahe"];
      reject_unknown(c, "clahe", {"grid_a", "grid_b", "clip", "levels", "out_w", "out_h"});
      read(c, "grid_a", p.clahe.grid_a);
      read(c, "grid_b", p.clahe.grid_b);
      read(c, "clip", p.clahe.clip);
      read(c, "levels", p.clahe.levels);
      read(c, "out_w", p.clahe.out_w);
      read(c, "out_h", p.clahe.out_h);
    }
    if (doc.contains("refiner")) {
      const auto& r = doc["refiner"];
      reject_unknown(r, "refiner", {"thr", "t", "min_token_len", "stopwords", "synonym_groups",
                                    "broad_classes"});
      read(r, "thr", p.refiner.thr);
      read(r, "t", p.refiner.t);
      read(r, "min_token_len", p.refiner.min_token_len);
      read(r, "stopwords", p.refiner.stopwords);
      read(r, "broad_classes", p.refiner.broad_classes);
      if (r.contains("synonym_groups")) {
        p.refiner.synonym_groups.clear();
        for (const auto& g : r["synonym_groups"]) {
          labelrefiner::SynonymGroup group;
          group.canonical = g.at("canonical").get<std::string>();
          group.members = g.at("members").get<std::set<std::string>>();
          group.members.insert(group.canonical);
          p.refiner.synonym_groups.push_back(std::move(group));
        }
      }
    }
    if (doc.contains("ingest")) {
      const auto& i = doc["ingest"];
      reject_unknown(i, "ingest", {"include_imports", "raw_block_size"});
      read(i, "include_imports", p.include_imports);
      read(i, "raw_block_size", p.raw_block_size);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("params: ") + e.what());
  }
  p.validate();
  return p;
}

PipelineParams load_params(const std::filesystem::path& path) {
  return parse_params(read_text_file(path));
}

}  // namespace visunpack
