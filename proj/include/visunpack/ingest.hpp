#pragma once

// Disassembly interchange loading and program metadata.
//
// The interchange stream is line oriented (see docs/interchange.md):
//   F <name> <entry>
//   B <function entry> <block entry>
//   I <block entry> <address> <HEXBYTES> [mnemonic ...]
// Addresses and bytes are uppercase hex without prefix or separators.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visunpack/hash.hpp"

namespace visunpack::ingest {

using Address = std::uint64_t;

struct Instruction {
  Address address = 0;
  Bytes bytes;
  std::string mnemonic;

  std::size_t size() const noexcept { return bytes.size(); }
};

struct BasicBlock {
  Address entry = 0;
  std::vector<Instruction> instructions;
  std::size_t byte_size = 0;

  /// Instruction bytes concatenated in address order.
  Bytes bytes() const;
};

struct Function {
  std::string name;
  Address entry = 0;
  std::vector<BasicBlock> blocks;
};

struct ProgramDisassembly {
  std::string sample_id;
  std::vector<Function> functions;
  double avg_instr = 0.0;
  double avg_bb = 0.0;
  std::size_t instruction_count = 0;
  std::size_t instruction_bytes = 0;

  std::size_t block_count() const noexcept;
  /// Blocks in canonical program order (function order, then block order).
  std::vector<const BasicBlock*> canonical_blocks() const;
};

struct LoadOptions {
  /// Keep `sym.imp.*` thunks in the program.
  bool include_imports = true;
};

/// Parses an interchange document. `sample_id` defaults to the SHA-256 of
/// the document text. Throws Error{SchemaError | OrderingError | EmptyProgram}.
ProgramDisassembly load_disassembly(std::string_view document, std::string sample_id = {},
                                    const LoadOptions& options = {});

/// Renders `program` in interchange syntax; load(serialize(p)) == p.
std::string serialize(const ProgramDisassembly& program);

/// Splits raw file bytes into consecutive pseudo-blocks of `block_size`,
/// each holding one pseudo-instruction. A trailing piece shorter than 3
/// bytes is merged into the previous block.
/// Throws Error{FileTooSmall} for < 3 bytes, Error{InvalidArgument} for block_size < 3.
ProgramDisassembly raw_blocks(std::span<const std::uint8_t> file_bytes, std::size_t block_size,
                              std::string sample_id = {});

/// Recomputes counts and averages from the blocks. Throws Error{EmptyProgram}.
void compute_metadata(ProgramDisassembly& program);

/// True for `fcn.<hex>` and `sym.imp.<text>`.
bool is_conventional_function_name(std::string_view name);

}  // namespace visunpack::ingest
