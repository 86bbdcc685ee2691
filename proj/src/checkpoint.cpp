#include <fstream>

#include "binio.hpp"
#include "pscs/model.hpp"

namespace pscs {

namespace {

constexpr char kMagic[5] = "PSCS";

}  // namespace

void save_checkpoint(std::ostream& out, const PscsModel& model) {
  using binio::put;
  const HyperParams& hp = model.hyper();
  binio::put_bytes(out, kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::int32_t>(out, hp.d);
  put<std::int32_t>(out, hp.hidden);
  put<std::int32_t>(out, hp.q);
  put<std::int32_t>(out, hp.m);
  put<std::int32_t>(out, hp.l);
  put<std::int32_t>(out, hp.g);
  put<float>(out, hp.dropout);
  put<float>(out, hp.margin);
  put<float>(out, hp.delta);
  put<float>(out, hp.lr);
  put<std::int32_t>(out, hp.batch);
  put<std::uint32_t>(out, model.ablation().bits());

  const ModelParams& params = model.params();
  const auto names = params.names();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const nn::Tensor& t = params.get(name);
    binio::put_string16(out, name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto dim : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    binio::put_bytes(out, t.data.data(), t.data.size() * sizeof(float));
  }
  if (!out) throw IoError("checkpoint: write failed");
}

void save_checkpoint(const std::string& path, const PscsModel& model) {
  // Write to a sibling and rename so a crash never leaves a half checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + tmp + "' for writing");
    save_checkpoint(out, model);
    out.close();
    if (!out) throw IoError("checkpoint: write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("checkpoint: cannot rename to '" + path + "'");
}

PscsModel load_checkpoint(std::istream& in) {
  binio::Reader r(in, "checkpoint");
  r.magic(kMagic);
  r.version(kCheckpointVersion);
  HyperParams hp;
  hp.d = r.get<std::int32_t>();
  hp.hidden = r.get<std::int32_t>();
  hp.q = r.get<std::int32_t>();
  hp.m = r.get<std::int32_t>();
  hp.l = r.get<std::int32_t>();
  hp.g = r.get<std::int32_t>();
  hp.dropout = r.get<float>();
  hp.margin = r.get<float>();
  hp.delta = r.get<float>();
  hp.lr = r.get<float>();
  hp.batch = r.get<std::int32_t>();
  try {
    hp.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: invalid stored ") + e.what());
  }
  AblationConfig ablation;
  try {
    ablation = AblationConfig::from_bits(r.get<std::uint32_t>());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  if (count > 64) throw FormatError("checkpoint: implausible tensor count " + std::to_string(count));
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string16();
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0 || rank > 4) throw FormatError("checkpoint: tensor '" + name + "' has bad rank");
    std::vector<std::int64_t> shape(rank);
    std::uint64_t numel = 1;
    for (auto& dim : shape) {
      dim = r.get<std::uint32_t>();
      numel *= static_cast<std::uint64_t>(dim);
    }
    if (numel > (1ull << 31)) throw FormatError("checkpoint: tensor '" + name + "' is implausibly large");
    nn::Tensor t(shape);
    r.floats(t.data, static_cast<std::size_t>(numel));
    if (params.contains(name)) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    params.add(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after the last tensor");
  return PscsModel(hp, ablation, std::move(params));
}

PscsModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  try {
    return load_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " [" + path + "]");
  }
}

}  // namespace pscs
