#include "visunpack/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "visunpack/error.hpp"
#include "visunpack/packerid.hpp"

namespace visunpack::synthetic {

namespace {

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string hex_name(ingest::Address a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fcn.%llx", static_cast<unsigned long long>(a));
  return buf;
}

}  // namespace

void relayout(ingest::ProgramDisassembly& program, ingest::Address base_address) {
  ingest::Address next = base_address;
  for (auto& fn : program.functions) {
    for (auto& block : fn.blocks) {
      block.entry = next;
      block.byte_size = 0;
      for (auto& ins : block.instructions) {
        ins.address = next;
        next += ins.size();
        block.byte_size += ins.size();
      }
    }
    fn.entry = fn.blocks.front().entry;
    fn.name = hex_name(fn.entry);
  }
  ingest::compute_metadata(program);
}

ingest::ProgramDisassembly family_seed(std::uint64_t seed, const FamilyShape& shape) {
  if (shape.min_blocks < 1 || shape.min_blocks > shape.max_blocks || shape.min_block_bytes < 1 ||
      shape.min_block_bytes > shape.max_block_bytes || shape.vocabulary < 1) {
    throw Error(ErrorCode::InvalidArgument, "inconsistent family shape");
  }
  std::mt19937_64 rng(seed);

  struct Template {
    Bytes bytes;
    std::string mnemonic;
  };
  std::vector<Template> vocab(shape.vocabulary);
  std::vector<double> weights(shape.vocabulary);
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    vocab[k].bytes.resize(uniform(rng, 1, 6));
    for (auto& b : vocab[k].bytes) b = static_cast<std::uint8_t>(uniform(rng, 0, 255));
    vocab[k].mnemonic = "op" + std::to_string(k);
    weights[k] = 1.0 + static_cast<double>(uniform(rng, 0, 9));
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  ingest::ProgramDisassembly program;
  program.sample_id = "synthetic-" + std::to_string(seed);
  const std::size_t blocks = uniform(rng, shape.min_blocks, shape.max_blocks);
  for (std::size_t made = 0; made < blocks;) {
    ingest::Function fn;
    const std::size_t in_fn = std::min(uniform(rng, 1, 6), blocks - made);
    for (std::size_t b = 0; b < in_fn; ++b, ++made) {
      ingest::BasicBlock block;
      const std::size_t target = uniform(rng, shape.min_block_bytes, shape.max_block_bytes);
      while (block.byte_size < target) {
        const auto& t = vocab[pick(rng)];
        Bytes bytes(t.bytes.begin(),
                    t.bytes.begin() + static_cast<std::ptrdiff_t>(std::min(t.bytes.size(), target - block.byte_size)));
        block.byte_size += bytes.size();
        block.instructions.push_back({0, std::move(bytes), t.mnemonic});
      }
      fn.blocks.push_back(std::move(block));
    }
    program.functions.push_back(std::move(fn));
  }
  relayout(program);
  return program;
}

ingest::ProgramDisassembly make_variant(const ingest::ProgramDisassembly& base, double mutation_rate,
                                        std::size_t max_swaps, std::uint64_t seed) {
  if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mutation_rate must be in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  ingest::ProgramDisassembly v = base;

  std::vector<std::uint8_t*> cells;
  std::vector<ingest::BasicBlock*> blocks;
  for (auto& fn : v.functions) {
    for (auto& block : fn.blocks) {
      blocks.push_back(&block);
      for (auto& ins : block.instructions) {
        for (auto& b : ins.bytes) cells.push_back(&b);
      }
    }
  }
  const auto mutations = static_cast<std::size_t>(std::llround(mutation_rate * static_cast<double>(cells.size())));
  std::shuffle(cells.begin(), cells.end(), rng);
  for (std::size_t i = 0; i < mutations; ++i) {
    *cells[i] = static_cast<std::uint8_t>(*cells[i] ^ uniform(rng, 1, 255));
  }

  if (blocks.size() >= 2) {
    const std::size_t swaps = uniform(rng, 0, max_swaps);
    for (std::size_t s = 0; s < swaps; ++s) {
      const std::size_t a = uniform(rng, 0, blocks.size() - 1);
      std::size_t b = uniform(rng, 0, blocks.size() - 2);
      if (b >= a) ++b;
      std::swap(blocks[a]->instructions, blocks[b]->instructions);
    }
  }
  v.sample_id = base.sample_id + "/v" + std::to_string(seed);
  relayout(v);
  return v;
}

Bytes make_pe(const ingest::ProgramDisassembly& program, std::size_t file_size, std::uint64_t seed) {
  constexpr std::uint32_t kFileAlign = 0x200;
  constexpr std::uint32_t kSectionAlign = 0x1000;
  constexpr std::uint32_t kTextOffset = 0x400;

  Bytes code;
  for (const auto* block : program.canonical_blocks()) {
    const auto b = block->bytes();
    code.insert(code.end(), b.begin(), b.end());
  }
  const auto text_raw = static_cast<std::uint32_t>((code.size() + kFileAlign - 1) / kFileAlign * kFileAlign);
  const std::size_t data_offset = kTextOffset + text_raw;
  if (file_size < data_offset + kFileAlign || file_size > 0xFFFFFFFFu) {
    throw Error(ErrorCode::InvalidArgument, "file_size cannot hold the program");
  }

  packerid::PeLayout layout;
  layout.entry_point_rva = kSectionAlign;
  packerid::Section text{".text", kTextOffset, text_raw, kSectionAlign, static_cast<std::uint32_t>(code.size())};
  const auto data_raw = static_cast<std::uint32_t>(file_size - data_offset);
  const std::uint32_t data_rva = kSectionAlign + (text_raw + kSectionAlign - 1) / kSectionAlign * kSectionAlign;
  packerid::Section data{".data", static_cast<std::uint32_t>(data_offset), data_raw, data_rva, data_raw};
  layout.sections = {text, data};

  Bytes image = packerid::build_pe(layout);
  std::copy(code.begin(), code.end(), image.begin() + kTextOffset);
  std::mt19937_64 rng(seed);
  for (std::size_t i = data_offset; i < image.size(); i += 8) {
    const std::uint64_t word = rng();
    for (std::size_t k = 0; k < 8 && i + k < image.size(); ++k) {
      image[i + k] = static_cast<std::uint8_t>(word >> (8 * k));
    }
  }
  return image;
}

}  // namespace visunpack::synthetic
