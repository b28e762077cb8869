#pragma once

// Synthetic program families for desk-scale experiments.
//
// A family is one random seed program drawn from a family-specific
// instruction vocabulary; variants are clones with a fraction of bytes
// mutated and a few blocks swapped, then laid out at fresh addresses.

#include <cstdint>
#include <string>

#include "visunpack/hash.hpp"
#include "visunpack/ingest.hpp"

namespace visunpack::synthetic {

struct FamilyShape {
  std::size_t min_blocks = 5;
  std::size_t max_blocks = 50;
  std::size_t min_block_bytes = 8;
  std::size_t max_block_bytes = 64;
  std::size_t vocabulary = 12;
};

/// Seed program of a family; deterministic in `seed`.
ingest::ProgramDisassembly family_seed(std::uint64_t seed, const FamilyShape& shape = {});

/// Clone of `base` with round(mutation_rate * instruction_bytes) distinct
/// bytes replaced and up to `max_swaps` block pairs exchanged.
ingest::ProgramDisassembly make_variant(const ingest::ProgramDisassembly& base, double mutation_rate,
                                        std::size_t max_swaps, std::uint64_t seed);

/// Reassigns contiguous addresses from `base_address` in canonical order and
/// refreshes metadata.
void relayout(ingest::ProgramDisassembly& program, ingest::Address base_address = 0x401000);

/// PE image of exactly `file_size` bytes: `.text` holds the program bytes at
/// the entry point, `.data` is seeded noise filling the rest.
Bytes make_pe(const ingest::ProgramDisassembly& program, std::size_t file_size, std::uint64_t seed);

}  // namespace visunpack::synthetic
