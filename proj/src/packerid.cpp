#include "visunpack/packerid.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <nlohmann/json.hpp>
#include <sstream>

#include "process.hpp"
#include "visunpack/error.hpp"

namespace visunpack::packerid {

namespace {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kLfanewOffset = 0x3c;
constexpr std::size_t kCoffHeaderSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::uint16_t kMagicPe32 = 0x10b;
constexpr std::uint16_t kMagicPe32Plus = 0x20b;

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u16(Bytes& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v & 0xff);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(Bytes& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool iequals_prefix(std::string_view text, std::string_view prefix) {
  if (prefix.size() > text.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::optional<std::size_t> PeLayout::section_of(std::uint32_t rva) const {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const auto& s = sections[i];
    if (rva >= s.virtual_rva &&
        static_cast<std::uint64_t>(rva) <
            static_cast<std::uint64_t>(s.virtual_rva) + s.virtual_extent()) {
      return i;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> PeLayout::rva_to_offset(std::uint32_t rva) const {
  const auto idx = section_of(rva);
  if (!idx) return std::nullopt;
  const auto& s = sections[*idx];
  const std::uint32_t delta = rva - s.virtual_rva;
  if (delta >= s.raw_size) return std::nullopt;
  return static_cast<std::size_t>(s.raw_offset) + delta;
}

PeLayout parse_pe(std::span<const std::uint8_t> b) {
  if (b.size() < kDosHeaderSize) {
    throw Error(ErrorCode::TruncatedHeader,
                "file is " + std::to_string(b.size()) + " bytes, DOS header needs 64");
  }
  if (b[0] != 'M' || b[1] != 'Z') throw Error(ErrorCode::NotPe, "missing MZ magic");

  const std::uint32_t lfanew = read_u32(b, kLfanewOffset);
  const std::size_t coff = static_cast<std::size_t>(lfanew) + 4;
  if (coff + kCoffHeaderSize > b.size()) {
    throw Error(ErrorCode::TruncatedHeader, "PE header at " + hex32(lfanew) + " past end of file");
  }
  if (b[lfanew] != 'P' || b[lfanew + 1] != 'E' || b[lfanew + 2] != 0 || b[lfanew + 3] != 0) {
    throw Error(ErrorCode::NotPe, "missing PE signature at " + hex32(lfanew));
  }

  const std::uint16_t num_sections = read_u16(b, coff + 2);
  const std::uint16_t opt_size = read_u16(b, coff + 16);
  const std::size_t opt = coff + kCoffHeaderSize;
  if (opt_size < 20 || opt + 20 > b.size()) {
    throw Error(ErrorCode::TruncatedHeader, "optional header truncated");
  }

  PeLayout layout;
  const std::uint16_t magic = read_u16(b, opt);
  if (magic == kMagicPe32) {
    layout.image_kind = ImageKind::pe32;
  } else if (magic == kMagicPe32Plus) {
    layout.image_kind = ImageKind::pe32plus;
  } else {
    throw Error(ErrorCode::NotPe, "unknown optional header magic " + hex32(magic));
  }
  layout.entry_point_rva = read_u32(b, opt + 16);

  const std::size_t table = opt + opt_size;
  if (table + static_cast<std::size_t>(num_sections) * kSectionHeaderSize > b.size()) {
    throw Error(ErrorCode::TruncatedHeader, "section table truncated");
  }
  layout.sections.reserve(num_sections);
  for (std::size_t i = 0; i < num_sections; ++i) {
    const std::size_t h = table + i * kSectionHeaderSize;
    Section s;
    const char* name = reinterpret_cast<const char*>(b.data() + h);
    s.name.assign(name, strnlen(name, 8));
    s.virtual_size = read_u32(b, h + 8);
    s.virtual_rva = read_u32(b, h + 12);
    s.raw_size = read_u32(b, h + 16);
    s.raw_offset = read_u32(b, h + 20);
    if (static_cast<std::uint64_t>(s.raw_offset) + s.raw_size > b.size()) {
      throw Error(ErrorCode::SectionOutOfBounds,
                  "section '" + s.name + "' raw range [" + hex32(s.raw_offset) + ", +" +
                      hex32(s.raw_size) + ") exceeds file length " + std::to_string(b.size()));
    }
    layout.sections.push_back(std::move(s));
  }
  return layout;
}

Bytes build_pe(const PeLayout& layout) {
  const std::uint32_t lfanew = 0x40;
  const bool plus = layout.image_kind == ImageKind::pe32plus;
  const std::uint16_t opt_size = plus ? 0xf0 : 0xe0;
  const std::size_t coff = lfanew + 4;
  const std::size_t opt = coff + kCoffHeaderSize;
  const std::size_t table = opt + opt_size;
  const std::size_t headers_end = table + layout.sections.size() * kSectionHeaderSize;

  std::size_t size = std::max<std::size_t>(headers_end, kDosHeaderSize);
  for (const auto& s : layout.sections) {
    size = std::max<std::size_t>(size, static_cast<std::size_t>(s.raw_offset) + s.raw_size);
  }
  Bytes b(size, 0);
  b[0] = 'M';
  b[1] = 'Z';
  put_u32(b, kLfanewOffset, lfanew);
  b[lfanew] = 'P';
  b[lfanew + 1] = 'E';
  put_u16(b, coff, plus ? 0x8664 : 0x14c);
  put_u16(b, coff + 2, static_cast<std::uint16_t>(layout.sections.size()));
  put_u16(b, coff + 16, opt_size);
  put_u16(b, coff + 18, 0x0102);
  put_u16(b, opt, plus ? kMagicPe32Plus : kMagicPe32);
  put_u32(b, opt + 16, layout.entry_point_rva);
  put_u32(b, opt + 32, 0x1000);  // SectionAlignment
  put_u32(b, opt + 36, 0x200);   // FileAlignment
  put_u32(b, opt + (plus ? 108 : 92), 16);  // NumberOfRvaAndSizes

  for (std::size_t i = 0; i < layout.sections.size(); ++i) {
    const auto& s = layout.sections[i];
    const std::size_t h = table + i * kSectionHeaderSize;
    std::memcpy(b.data() + h, s.name.data(), std::min<std::size_t>(s.name.size(), 8));
    put_u32(b, h + 8, s.virtual_size);
    put_u32(b, h + 12, s.virtual_rva);
    put_u32(b, h + 16, s.raw_size);
    put_u32(b, h + 20, s.raw_offset);
  }
  return b;
}

// ---------------------------------------------------------------------------

bool PackerSignature::matches_at(std::span<const std::uint8_t> bytes,
                                 std::size_t offset) const noexcept {
  if (offset > bytes.size() || bytes.size() - offset < pattern.size()) return false;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (!pattern[i].wildcard && bytes[offset + i] != pattern[i].value) return false;
  }
  return true;
}

std::vector<PackerSignature> load_signature_db(std::string_view text) {
  std::vector<PackerSignature> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);

    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      if (eol == text.size()) break;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::ParseError, where + ": missing '='");
    PackerSignature sig;
    sig.name = std::string(trim(line.substr(0, eq)));
    if (sig.name.empty()) throw Error(ErrorCode::ParseError, where + ": empty signature name");

    std::istringstream body{std::string(line.substr(eq + 1))};
    std::string tok;
    while (body >> tok) {
      if (sig.ep_only) {
        throw Error(ErrorCode::ParseError, where + ": text after (ep_only): '" + tok + "'");
      }
      if (tok == "(ep_only)") {
        sig.ep_only = true;
      } else if (tok == "??") {
        sig.pattern.push_back({0, true});
      } else if (tok.size() == 2 && hex_digit(tok[0]) >= 0 && hex_digit(tok[1]) >= 0) {
        sig.pattern.push_back(
            {static_cast<std::uint8_t>(hex_digit(tok[0]) * 16 + hex_digit(tok[1])), false});
      } else {
        throw Error(ErrorCode::ParseError, where + ": bad pattern token '" + tok + "'");
      }
    }

    const bool all_wild = std::all_of(sig.pattern.begin(), sig.pattern.end(),
                                      [](const PatternByte& p) { return p.wildcard; });
    if (sig.pattern.size() < kMinPatternLength || all_wild) {
      throw Error(ErrorCode::WeakPattern,
                  where + ": '" + sig.name + "' has " + std::to_string(sig.pattern.size()) +
                      " elements" + (all_wild ? ", all wildcards" : ""));
    }
    out.push_back(std::move(sig));
    if (eol == text.size()) break;
  }
  return out;
}

std::string format_signature(const PackerSignature& sig) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out = sig.name + " =";
  for (const auto& p : sig.pattern) {
    out.push_back(' ');
    if (p.wildcard) {
      out += "??";
    } else {
      out.push_back(kHex[p.value >> 4]);
      out.push_back(kHex[p.value & 0xf]);
    }
  }
  if (sig.ep_only) out += " (ep_only)";
  return out;
}

namespace {

// Candidate offsets come from memchr on the first concrete byte.
void scan_range(const PackerSignature& sig, std::span<const std::uint8_t> bytes,
                std::size_t begin, std::size_t end, std::vector<PackerMatch>& out) {
  const std::size_t m = sig.pattern.size();
  if (end - begin < m) return;
  std::size_t anchor = 0;
  while (sig.pattern[anchor].wildcard) ++anchor;
  const std::uint8_t anchor_value = sig.pattern[anchor].value;
  const std::size_t last_start = end - m;

  std::size_t start = begin;
  while (start <= last_start) {
    const auto* base = bytes.data() + start + anchor;
    const std::size_t span_len = last_start - start + 1;
    const void* hit = std::memchr(base, anchor_value, span_len);
    if (hit == nullptr) break;
    const std::size_t found =
        static_cast<std::size_t>(static_cast<const std::uint8_t*>(hit) - bytes.data()) - anchor;
    if (sig.matches_at(bytes, found)) out.push_back({sig.name, found, false, m});
    start = found + 1;
  }
}

}  // namespace

Identification identify_packer(std::span<const std::uint8_t> file_bytes, const PeLayout& layout,
                               std::span<const PackerSignature> db) {
  Identification result;
  const auto ep_offset = layout.rva_to_offset(layout.entry_point_rva);
  if (!ep_offset) {
    result.entry_point_unmapped = true;
    result.diagnostics.push_back("EntryPointUnmapped: entry RVA " +
                                 hex32(layout.entry_point_rva) +
                                 " maps into no section; ep_only signatures skipped");
  }

  const auto n = static_cast<std::ptrdiff_t>(db.size());
#pragma omp parallel
  {
    std::vector<PackerMatch> local;
#pragma omp for schedule(dynamic, 16) nowait
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& sig = db[static_cast<std::size_t>(i)];
      if (sig.ep_only) {
        if (ep_offset && sig.matches_at(file_bytes, *ep_offset)) {
          local.push_back({sig.name, *ep_offset, true, sig.pattern.size()});
        }
        continue;
      }
      for (const auto& s : layout.sections) {
        const std::size_t begin = std::min<std::size_t>(s.raw_offset, file_bytes.size());
        const std::size_t end =
            std::min<std::size_t>(static_cast<std::size_t>(s.raw_offset) + s.raw_size,
                                  file_bytes.size());
        scan_range(sig, file_bytes, begin, end, local);
      }
    }
#pragma omp critical(visunpack_identify_merge)
    result.matches.insert(result.matches.end(), local.begin(), local.end());
  }

  std::sort(result.matches.begin(), result.matches.end(),
            [](const PackerMatch& a, const PackerMatch& b) {
              if (a.ep_only != b.ep_only) return a.ep_only;
              if (a.pattern_length != b.pattern_length) return a.pattern_length > b.pattern_length;
              if (a.offset != b.offset) return a.offset < b.offset;
              return a.name < b.name;
            });
  // Overlapping sections can report the same hit twice.
  result.matches.erase(std::unique(result.matches.begin(), result.matches.end()),
                       result.matches.end());
  return result;
}

// ---------------------------------------------------------------------------

void UnpackPlan::validate() const {
  auto count = [this](std::string_view needle) {
    std::size_t n = 0;
    for (auto p = command_template.find(needle); p != std::string::npos;
         p = command_template.find(needle, p + needle.size())) {
      ++n;
    }
    return n;
  };
  if (count("{in}") != 1 || count("{out}") != 1) {
    throw Error(ErrorCode::InvalidArgument,
                "plan '" + packer_name + "': command must contain {in} and {out} exactly once");
  }
  if (!(timeout_seconds > 0)) {
    throw Error(ErrorCode::InvalidArgument, "plan '" + packer_name + "': timeout must be > 0");
  }
}

std::vector<UnpackPlan> load_unpack_plans(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("unpack plans: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::ParseError, "unpack plans: expected an object");
  std::vector<UnpackPlan> plans;
  for (const auto& [name, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("command") || !entry["command"].is_string()) {
      throw Error(ErrorCode::ParseError, "unpack plans: '" + name + "' needs a string 'command'");
    }
    UnpackPlan plan{name, entry["command"].get<std::string>(), entry.value("timeout", 60.0)};
    plan.validate();
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::vector<UnpackPlan> select_plans(std::string_view packer_name,
                                     std::span<const UnpackPlan> plans) {
  std::vector<UnpackPlan> chosen;
  const UnpackPlan* generic = nullptr;
  for (const auto& p : plans) {
    if (p.packer_name == kGenericPlanName) {
      generic = &p;
    } else if (!p.packer_name.empty() && iequals_prefix(packer_name, p.packer_name)) {
      chosen.push_back(p);
    }
  }
  std::stable_sort(chosen.begin(), chosen.end(), [](const UnpackPlan& a, const UnpackPlan& b) {
    return a.packer_name.size() > b.packer_name.size();
  });
  if (generic != nullptr) chosen.push_back(*generic);
  return chosen;
}

std::filesystem::path unpack(const std::filesystem::path& input, const UnpackPlan& plan,
                             std::optional<std::filesystem::path> output) {
  plan.validate();
  const std::filesystem::path out = output.value_or(std::filesystem::path(input.string() + ".unpacked"));
  std::error_code ec;
  std::filesystem::remove(out, ec);

  std::string cmd = plan.command_template;
  cmd.replace(cmd.find("{in}"), 4, detail::shell_quote(input.string()));
  cmd.replace(cmd.find("{out}"), 5, detail::shell_quote(out.string()));

  const auto res = detail::run_shell(cmd, plan.timeout_seconds);
  if (res.timed_out) {
    throw Error(ErrorCode::CommandFailed,
                "plan '" + plan.packer_name + "' timed out after " +
                    std::to_string(plan.timeout_seconds) + " s");
  }
  if (res.exit_code != 0) {
    throw Error(ErrorCode::CommandFailed,
                "plan '" + plan.packer_name + "' exited with status " + std::to_string(res.exit_code));
  }

  if (!std::filesystem::exists(out) || std::filesystem::file_size(out) == 0) {
    throw Error(ErrorCode::UnpackFailed, "plan '" + plan.packer_name + "' produced no output");
  }
  if (sha256_hex(read_file(out)) == sha256_hex(read_file(input))) {
    throw Error(ErrorCode::UnpackFailed,
                "plan '" + plan.packer_name + "' output is identical to its input");
  }
  return out;
}

UnpackOutcome unpack_with_fallback(const std::filesystem::path& input,
                                   std::span<const UnpackPlan> plans,
                                   std::optional<std::filesystem::path> output) {
  UnpackOutcome outcome;
  std::optional<Error> last;
  for (const auto& plan : plans) {
    try {
      outcome.output = unpack(input, plan, output);
      outcome.plan_used = plan.packer_name;
      return outcome;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CommandFailed && e.code() != ErrorCode::UnpackFailed) throw;
      outcome.failures.push_back(e.what());
      last = e;
    }
  }
  if (last) throw *last;
  throw Error(ErrorCode::UnpackFailed, "no unpack plan configured for " + input.string());
}

}  // namespace visunpack::packerid
