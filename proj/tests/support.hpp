#pragma once

// Small helpers shared by the test binaries.

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "visunpack/error.hpp"
#include "visunpack/ingest.hpp"

namespace testsupport {

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("visunpack-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixtures_dir() {
  if (const char* env = std::getenv("VISUNPACK_FIXTURES")) return env;
  return std::filesystem::path(__FILE__).parent_path() / "fixtures";
}

/// Program with one function holding one single-instruction block per entry
/// of `blocks`, laid out contiguously from 0x401000.
inline visunpack::ingest::ProgramDisassembly program_of(const std::vector<visunpack::Bytes>& blocks) {
  visunpack::ingest::ProgramDisassembly p;
  p.sample_id = "fixture";
  visunpack::ingest::Function fn;
  fn.name = "fcn.401000";
  fn.entry = 0x401000;
  visunpack::ingest::Address next = 0x401000;
  for (const auto& b : blocks) {
    visunpack::ingest::BasicBlock block;
    block.entry = next;
    block.instructions.push_back({next, b, "db"});
    block.byte_size = b.size();
    next += b.size();
    fn.blocks.push_back(std::move(block));
  }
  p.functions.push_back(std::move(fn));
  visunpack::ingest::compute_metadata(p);
  return p;
}

inline visunpack::Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  visunpack::Bytes b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace testsupport

/// Runs `expr` and checks it throws visunpack::Error with `code`.
#define CHECK_ERROR_CODE(expr, expected_code)                          \
  do {                                                                 \
    bool thrown_ = false;                                              \
    try {                                                              \
      (void)(expr);                                                    \
    } catch (const visunpack::Error& e_) {                             \
      thrown_ = true;                                                  \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());          \
    }                                                                  \
    CHECK_MESSAGE(thrown_, "expected visunpack::Error from " #expr);   \
  } while (0)
