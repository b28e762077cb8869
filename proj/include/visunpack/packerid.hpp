#pragma once

// PEiD-style packer identification and external unpacker dispatch.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visunpack/hash.hpp"

namespace visunpack::packerid {

enum class ImageKind { pe32, pe32plus };

struct Section {
  std::string name;
  std::uint32_t raw_offset = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t virtual_rva = 0;
  std::uint32_t virtual_size = 0;

  /// Size of the virtual range; a zero VirtualSize falls back to the raw size.
  std::uint32_t virtual_extent() const noexcept {
    return virtual_size != 0 ? virtual_size : raw_size;
  }
};

struct PeLayout {
  std::uint32_t entry_point_rva = 0;
  std::vector<Section> sections;
  ImageKind image_kind = ImageKind::pe32;

  /// File offset of `rva`, or nullopt when no section's virtual range
  /// holds it or the byte lies past the section's raw data.
  std::optional<std::size_t> rva_to_offset(std::uint32_t rva) const;
  /// Index of the section whose virtual range holds `rva`.
  std::optional<std::size_t> section_of(std::uint32_t rva) const;
};

/// Parses DOS/COFF/optional headers and the section table only.
/// Throws Error{TruncatedHeader | NotPe | SectionOutOfBounds}.
PeLayout parse_pe(std::span<const std::uint8_t> file_bytes);

/// Writes a minimal PE image for `layout`: headers, section table, and
/// zero-filled section data. The file is exactly long enough to hold the
/// furthest section (or the headers). Used for fixtures and synthetic corpora.
Bytes build_pe(const PeLayout& layout);

// ---------------------------------------------------------------------------
// Signatures

/// One pattern element: a concrete byte or a wildcard (`??`).
struct PatternByte {
  std::uint8_t value = 0;
  bool wildcard = false;

  friend bool operator==(const PatternByte&, const PatternByte&) = default;
};

struct PackerSignature {
  std::string name;
  std::vector<PatternByte> pattern;
  bool ep_only = false;

  bool matches_at(std::span<const std::uint8_t> bytes, std::size_t offset) const noexcept;
};

inline constexpr std::size_t kMinPatternLength = 4;

/// Parses the line-oriented signature DB:
///   <name> = <hex bytes and ?? separated by spaces> [(ep_only)]
/// `#` starts a comment, blank lines are ignored.
/// Throws Error{ParseError | WeakPattern}, message carries "line N".
std::vector<PackerSignature> load_signature_db(std::string_view text);

/// Renders one signature back into DB syntax.
std::string format_signature(const PackerSignature& sig);

struct PackerMatch {
  std::string name;
  std::size_t offset = 0;
  bool ep_only = false;
  std::size_t pattern_length = 0;

  friend bool operator==(const PackerMatch&, const PackerMatch&) = default;
};

struct Identification {
  /// ep_only matches first, then longer patterns, then offset, then name.
  std::vector<PackerMatch> matches;
  /// Non-fatal conditions such as EntryPointUnmapped.
  std::vector<std::string> diagnostics;
  bool entry_point_unmapped = false;
};

/// Scans `file_bytes` with every signature in `db`. ep_only signatures are
/// tried only at the entry-point file offset; the rest at every offset of
/// every section's raw range (whole pattern inside the section).
Identification identify_packer(std::span<const std::uint8_t> file_bytes,
                               const PeLayout& layout,
                               std::span<const PackerSignature> db);

// ---------------------------------------------------------------------------
// Unpacking

struct UnpackPlan {
  std::string packer_name;
  /// Shell command with exactly one `{in}` and one `{out}` placeholder.
  std::string command_template;
  double timeout_seconds = 60.0;

  /// Throws Error{InvalidArgument} when the placeholder invariant fails.
  void validate() const;
};

inline constexpr std::string_view kGenericPlanName = "generic";

/// Parses the unpack-plan config: a JSON object mapping packer-name prefix to
/// {"command": "...", "timeout": seconds}. Every plan is validated.
std::vector<UnpackPlan> load_unpack_plans(std::string_view json_text);

/// Plans applicable to `packer_name`: prefix matches (longest prefix first),
/// followed by the generic plan if configured.
std::vector<UnpackPlan> select_plans(std::string_view packer_name,
                                     std::span<const UnpackPlan> plans);

/// Runs `plan` on `input`, writing to `output` (default: input + ".unpacked").
/// Succeeds only when the output exists, is non-empty, and hashes differently
/// from the input. Throws Error{CommandFailed | UnpackFailed}.
std::filesystem::path unpack(const std::filesystem::path& input, const UnpackPlan& plan,
                             std::optional<std::filesystem::path> output = std::nullopt);

struct UnpackOutcome {
  std::filesystem::path output;
  std::string plan_used;
  /// One line per failed attempt, in order.
  std::vector<std::string> failures;
};

/// Tries every plan in order until one succeeds. Throws the last
/// Error{UnpackFailed | CommandFailed} when none does.
UnpackOutcome unpack_with_fallback(const std::filesystem::path& input,
                                   std::span<const UnpackPlan> plans,
                                   std::optional<std::filesystem::path> output = std::nullopt);

}  // namespace visunpack::packerid
