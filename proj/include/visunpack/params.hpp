#pragma once

#include <filesystem>
#include <string_view>

#include "visunpack/clahe.hpp"
#include "visunpack/labelrefiner.hpp"
#include "visunpack/semanticforge.hpp"

namespace visunpack {

/// Every tunable of the pipeline, loadable from one JSON document:
///
///   {
///     "forge":   {"unit_len": 3, "region_len": 15, "angular_bins": 1,
///                 "radial_bins": 3, "block_stride": 2, "byte_scale": true,
///                 "placement": "unit" | "instruction"},
///     "clahe":   {"grid_a": 8, "grid_b": 8, "clip": 4.0, "levels": 256,
///                 "out_w": 512, "out_h": 128},
///     "refiner": {"thr": 0.75, "t": 3, "min_token_len": 3,
///                 "stopwords": [...], "broad_classes": [...],
///                 "synonym_groups": [{"canonical": "pua", "members": ["pup"]}]},
///     "ingest":  {"include_imports": true, "raw_block_size": 15}
///   }
///
/// Missing keys keep their defaults; unknown keys are rejected.
struct PipelineParams {
  semanticforge::ForgeParams forge;
  clahe::ClaheParams clahe;
  labelrefiner::RefinerParams refiner = labelrefiner::RefinerParams::defaults();
  bool include_imports = true;
  std::size_t raw_block_size = 15;

  void validate() const;
};

/// Throws Error{ParseError | InvalidArgument}.
PipelineParams parse_params(std::string_view json_text);
PipelineParams load_params(const std::filesystem::path& path);

}  // namespace visunpack
