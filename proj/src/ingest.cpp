#include "visunpack/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>

#include "visunpack/error.hpp"

namespace visunpack::ingest {

namespace {

bool is_upper_hex(char c) { return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'F'); }

std::optional<Address> parse_address(std::string_view s) {
  if (s.empty() || s.size() > 16) return std::nullopt;
  if (!std::all_of(s.begin(), s.end(), is_upper_hex)) return std::nullopt;
  Address v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<Bytes> parse_hex_bytes(std::string_view s) {
  if (s.empty() || s.size() % 2 != 0) return std::nullopt;
  if (!std::all_of(s.begin(), s.end(), is_upper_hex)) return std::nullopt;
  Bytes out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::from_chars(s.data() + 2 * i, s.data() + 2 * i + 2, out[i], 16);
  }
  return out;
}

std::string hex_address(Address a) {
  std::ostringstream os;
  os << std::uppercase << std::hex << a;
  return os.str();
}

std::string hex_bytes(const Bytes& b) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto v : b) {
    s.push_back(kHex[v >> 4]);
    s.push_back(kHex[v & 0xf]);
  }
  return s;
}

/// Splits off the next whitespace-delimited field; `rest` keeps the remainder.
std::string_view next_field(std::string_view& rest) {
  std::size_t i = 0;
  while (i < rest.size() && (rest[i] == ' ' || rest[i] == '\t')) ++i;
  std::size_t j = i;
  while (j < rest.size() && rest[j] != ' ' && rest[j] != '\t') ++j;
  auto field = rest.substr(i, j - i);
  rest.remove_prefix(j);
  return field;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct PendingBlock {
  std::size_t function_index;
  BasicBlock block;
  std::size_t order;
};

}  // namespace

Bytes BasicBlock::bytes() const {
  Bytes out;
  out.reserve(byte_size);
  for (const auto& ins : instructions) out.insert(out.end(), ins.bytes.begin(), ins.bytes.end());
  return out;
}

std::size_t ProgramDisassembly::block_count() const noexcept {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.blocks.size();
  return n;
}

std::vector<const BasicBlock*> ProgramDisassembly::canonical_blocks() const {
  std::vector<const BasicBlock*> out;
  out.reserve(block_count());
  for (const auto& f : functions) {
    for (const auto& b : f.blocks) out.push_back(&b);
  }
  return out;
}

bool is_conventional_function_name(std::string_view name) {
  if (name.starts_with("sym.imp.")) return name.size() > 8;
  if (name.starts_with("fcn.")) {
    auto hex = name.substr(4);
    return !hex.empty() && std::all_of(hex.begin(), hex.end(), [](char c) {
      return std::isxdigit(static_cast<unsigned char>(c)) != 0;
    });
  }
  return false;
}

void compute_metadata(ProgramDisassembly& program) {
  std::size_t blocks = 0;
  program.instruction_count = 0;
  program.instruction_bytes = 0;
  for (auto& f : program.functions) {
    for (auto& b : f.blocks) {
      ++blocks;
      b.byte_size = 0;
      for (const auto& ins : b.instructions) b.byte_size += ins.size();
      program.instruction_count += b.instructions.size();
      program.instruction_bytes += b.byte_size;
    }
  }
  if (blocks == 0 || program.instruction_count == 0) {
    throw Error(ErrorCode::EmptyProgram, "program has no basic blocks");
  }
  program.avg_instr =
      static_cast<double>(program.instruction_bytes) / static_cast<double>(program.instruction_count);
  program.avg_bb = static_cast<double>(program.instruction_bytes) / static_cast<double>(blocks);
}

ProgramDisassembly load_disassembly(std::string_view document, std::string sample_id,
                                    const LoadOptions& options) {
  ProgramDisassembly program;
  program.sample_id = sample_id.empty()
                          ? sha256_hex({reinterpret_cast<const std::uint8_t*>(document.data()),
                                        document.size()})
                          : std::move(sample_id);

  std::map<Address, std::size_t> function_by_entry;
  std::vector<PendingBlock> pending;
  std::map<Address, std::size_t> latest_block;  // block entry -> index into pending

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < document.size()) {
    const std::size_t eol = std::min(document.find('\n', pos), document.size());
    std::string_view line = trim(document.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    const std::string where = "line " + std::to_string(line_no) + ": ";
    std::string_view rest = line;
    const auto kind = next_field(rest);

    if (kind == "F") {
      const auto name = next_field(rest);
      const auto entry = parse_address(next_field(rest));
      if (name.empty() || !entry || !trim(rest).empty()) {
        throw Error(ErrorCode::SchemaError, where + "expected 'F <name> <entry>'");
      }
      if (!is_conventional_function_name(name)) {
        throw Error(ErrorCode::SchemaError,
                    where + "function name '" + std::string(name) +
                        "' is neither fcn.<hex> nor sym.imp.<name>");
      }
      if (function_by_entry.contains(*entry)) {
        throw Error(ErrorCode::SchemaError, where + "duplicate function entry " + hex_address(*entry));
      }
      function_by_entry.emplace(*entry, program.functions.size());
      program.functions.push_back(Function{std::string(name), *entry, {}});
    } else if (kind == "B") {
      const auto fn = parse_address(next_field(rest));
      const auto entry = parse_address(next_field(rest));
      if (!fn || !entry || !trim(rest).empty()) {
        throw Error(ErrorCode::SchemaError, where + "expected 'B <function entry> <block entry>'");
      }
      const auto it = function_by_entry.find(*fn);
      if (it == function_by_entry.end()) {
        throw Error(ErrorCode::SchemaError, where + "block refers to undeclared function " + hex_address(*fn));
      }
      BasicBlock block;
      block.entry = *entry;
      latest_block[*entry] = pending.size();
      pending.push_back({it->second, std::move(block), pending.size()});
    } else if (kind == "I") {
      const auto blk = parse_address(next_field(rest));
      const auto addr = parse_address(next_field(rest));
      auto bytes = parse_hex_bytes(next_field(rest));
      if (!blk || !addr || !bytes) {
        throw Error(ErrorCode::SchemaError,
                    where + "expected 'I <block entry> <address> <HEXBYTES> [mnemonic]'");
      }
      const auto it = latest_block.find(*blk);
      if (it == latest_block.end()) {
        throw Error(ErrorCode::SchemaError, where + "instruction refers to undeclared block " + hex_address(*blk));
      }
      auto& block = pending[it->second].block;
      if (!block.instructions.empty() && *addr <= block.instructions.back().address) {
        throw Error(ErrorCode::OrderingError,
                    where + "address " + hex_address(*addr) + " not above previous " +
                        hex_address(block.instructions.back().address) + " in block " +
                        hex_address(block.entry));
      }
      block.byte_size += bytes->size();
      block.instructions.push_back({*addr, std::move(*bytes), std::string(trim(rest))});
    } else {
      throw Error(ErrorCode::SchemaError, where + "unknown record kind '" + std::string(kind) + "'");
    }
  }

  for (const auto& p : pending) {
    if (p.block.instructions.empty()) {
      throw Error(ErrorCode::SchemaError, "block " + hex_address(p.block.entry) + " has no instructions");
    }
  }

  // Deduplicate by entry address: longest wins, earliest declaration on ties.
  std::map<Address, std::size_t> keep;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    auto [it, inserted] = keep.emplace(pending[i].block.entry, i);
    if (!inserted && pending[i].block.byte_size > pending[it->second].block.byte_size) {
      it->second = i;
    }
  }
  for (const auto& [entry, idx] : keep) {
    auto& p = pending[idx];
    program.functions[p.function_index].blocks.push_back(std::move(p.block));
  }

  if (!options.include_imports) {
    std::erase_if(program.functions,
                  [](const Function& f) { return f.name.starts_with("sym.imp."); });
  }
  std::sort(program.functions.begin(), program.functions.end(),
            [](const Function& a, const Function& b) { return a.entry < b.entry; });
  for (auto& f : program.functions) {
    std::sort(f.blocks.begin(), f.blocks.end(),
              [](const BasicBlock& a, const BasicBlock& b) { return a.entry < b.entry; });
  }
  compute_metadata(program);
  return program;
}

std::string serialize(const ProgramDisassembly& program) {
  std::ostringstream os;
  for (const auto& f : program.functions) {
    os << "F " << f.name << ' ' << hex_address(f.entry) << '\n';
  }
  for (const auto& f : program.functions) {
    for (const auto& b : f.blocks) {
      os << "B " << hex_address(f.entry) << ' ' << hex_address(b.entry) << '\n';
      for (const auto& ins : b.instructions) {
        os << "I " << hex_address(b.entry) << ' ' << hex_address(ins.address) << ' '
           << hex_bytes(ins.bytes);
        if (!ins.mnemonic.empty()) os << ' ' << ins.mnemonic;
        os << '\n';
      }
    }
  }
  return os.str();
}

ProgramDisassembly raw_blocks(std::span<const std::uint8_t> file_bytes, std::size_t block_size,
                              std::string sample_id) {
  constexpr std::size_t kMinBlock = 3;
  if (block_size < kMinBlock) {
    throw Error(ErrorCode::InvalidArgument, "block_size must be >= 3");
  }
  if (file_bytes.size() < kMinBlock) {
    throw Error(ErrorCode::FileTooSmall,
                "file has " + std::to_string(file_bytes.size()) + " bytes, need >= 3");
  }

  ProgramDisassembly program;
  program.sample_id = sample_id.empty() ? sha256_hex(file_bytes) : std::move(sample_id);
  Function fn{"fcn.0", 0, {}};

  std::vector<std::pair<std::size_t, std::size_t>> pieces;  // offset, length
  for (std::size_t off = 0; off < file_bytes.size(); off += block_size) {
    pieces.emplace_back(off, std::min(block_size, file_bytes.size() - off));
  }
  if (pieces.size() > 1 && pieces.back().second < kMinBlock) {
    const auto tail = pieces.back().second;
    pieces.pop_back();
    pieces.back().second += tail;
  }

  fn.blocks.reserve(pieces.size());
  for (const auto& [off, len] : pieces) {
    BasicBlock b;
    b.entry = off;
    b.byte_size = len;
    b.instructions.push_back(
        {off, Bytes(file_bytes.begin() + static_cast<std::ptrdiff_t>(off),
                    file_bytes.begin() + static_cast<std::ptrdiff_t>(off + len)),
         "db"});
    fn.blocks.push_back(std::move(b));
  }
  program.functions.push_back(std::move(fn));
  compute_metadata(program);
  return program;
}

}  // namespace visunpack::ingest
