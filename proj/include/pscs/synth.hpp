#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pscs/corpus.hpp"

namespace pscs {

// Generator for CodeSearchNet-style Java pairs. Snippets come in families
// that share every identifier and differ only in control flow (while vs if)
// and comparison direction (< vs >); the docstring names both, so telling
// family members apart needs the AST structure, not just the tokens.
struct SynthConfig {
  std::size_t families = 100;
  std::size_t variants = 4;  // 1..4 members per family
  std::uint64_t seed = 1;
  std::string id_prefix = "syn";
  std::size_t first_family = 0;  // offset, so disjoint slices can be drawn
};

std::vector<RawPair> synth_pairs(const SynthConfig& config);

// Writes `train_pairs` and `test_pairs` pairs (rounded up to whole families)
// drawn from disjoint families.
void write_synth_split(const std::string& train_file, const std::string& test_file, std::size_t train_pairs,
                       std::size_t test_pairs, std::size_t variants, std::uint64_t seed);

}  // namespace pscs
