// A small preprocessed synthetic dataset shared by the engine tests.
#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "pscs/engine.hpp"
#include "pscs/synth.hpp"

namespace fixture {

inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pscs-unit-" + std::to_string(::getpid())) / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

struct Dataset {
  std::string dir;
  pscs::DataDir data;
  pscs::HyperParams hp;
  pscs::EncodedCorpus train;
  pscs::EncodedCorpus test;
};

// 120 train / 40 test pairs, tiny model sizes.
inline const Dataset& dataset() {
  static const Dataset ds = [] {
    Dataset d;
    d.dir = scratch_dir("data");
    pscs::write_synth_split(d.dir + "/train.jsonl", d.dir + "/test.jsonl", 120, 40, 4, 3);
    pscs::PreprocessConfig pc;
    pc.input = d.dir + "/train.jsonl";
    pc.test_input = d.dir + "/test.jsonl";
    pc.out_dir = d.dir + "/data";
    pc.min_count = 1;
    pscs::preprocess(pc);
    d.data = pscs::DataDir::open(pc.out_dir);
    d.hp.d = 16;
    d.hp.hidden = 8;
    d.hp.g = 20;
    d.hp.batch = 16;
    d.hp.lr = 1e-3f;
    d.train = pscs::load_corpus(d.data.file("train.paths.jsonl"), d.data.words, d.data.nodes, d.hp);
    d.test = pscs::load_corpus(d.data.file("test.paths.jsonl"), d.data.words, d.data.nodes, d.hp);
    return d;
  }();
  return ds;
}

}  // namespace fixture
