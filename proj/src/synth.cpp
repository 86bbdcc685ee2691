#include "pscs/synth.hpp"

#include <array>
#include <numeric>

#include "pscs/common.hpp"

namespace pscs {

namespace {

const std::vector<std::string> kVerbs = {
    "compute", "update", "adjust", "scale",   "normalize", "clamp",  "advance", "reduce",
    "expand",  "shift",  "refresh", "balance", "correct",  "smooth", "grow",    "shrink",
    "rotate",  "align",  "merge",  "resolve", "tune",      "boost",  "trim",    "settle"};
const std::vector<std::string> kQuals = {"total", "current", "max",    "min",    "first",  "last",
                                         "next",  "default", "pending", "cached", "base",   "local",
                                         "global", "remote", "average", "initial"};
const std::vector<std::string> kNouns = {
    "price",   "count",  "offset", "weight", "score",   "balance", "level",   "index",
    "size",    "length", "depth",  "width",  "height",  "volume",  "speed",   "rate",
    "budget",  "quota",  "timeout", "delay", "retry",   "credit",  "margin",  "ratio",
    "version", "token",  "cursor", "buffer", "counter", "padding", "pressure", "temperature",
    "distance", "angle", "amount", "reward", "penalty", "capacity", "position", "priority",
    "latency", "signal", "voltage", "frame",  "sample",  "bucket",  "window",  "factor"};
const std::vector<std::string> kLimits = {"limit", "threshold", "bound", "ceiling", "target", "cap", "goal", "mark"};
const std::vector<std::string> kHelpers = {"step", "next", "bump", "apply", "advance", "decay", "raise", "lower",
                                           "fold", "tick"};
const std::vector<std::string> kTypes = {"int", "long", "double", "float", "short", "Integer"};

// Statements shared by every member of a family: lexical and structural
// noise around the one statement the members differ in.
// $T type, $A accumulator, $N noun, $L limit, $O other noun, $C helper call.
const std::vector<std::string> kExtras = {
    "if ($L == 0) {\n        return $N;\n    }\n",
    "log.debug(\"update $N\");\n",
    "int $OCount = 0;\n",
    "for (int i = 0; i < $L; i++) {\n        $OCount += i;\n    }\n",
    "try {\n        $A = $C($A);\n    } catch (IllegalStateException e) {\n        log.warn(\"retry\", e);\n    }\n",
    "this.$O = $N;\n",
    "List<String> $ONames = new ArrayList<>();\n",
    "$A = Math.max($A, $N);\n",
    "if (cache.containsKey($O)) {\n        $A = cache.get($O);\n    }\n",
    "checkState($A >= 0, \"negative $O\");\n",
};

std::string expand(std::string t, const std::vector<std::pair<std::string, std::string>>& vars) {
  for (const auto& [k, v] : vars) {
    for (std::size_t pos = t.find(k); pos != std::string::npos; pos = t.find(k, pos + v.size())) t.replace(pos, k.size(), v);
  }
  return t;
}

std::string cap(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

// Variant v: bit 0 = if instead of while, bit 1 = '>' instead of '<'.
const std::array<std::vector<std::string>, 4> kPhrases = {{
    {"while it stays below the", "repeatedly until it reaches the", "in a loop while under the",
     "while it is less than the"},
    {"while it stays above the", "repeatedly until it drops to the", "in a loop while over the",
     "while it is greater than the"},
    {"once if it is below the", "only when it is under the", "if it is less than the", "once when below the"},
    {"once if it is above the", "only when it is over the", "if it is greater than the", "once when above the"},
}};

}  // namespace

std::vector<RawPair> synth_pairs(const SynthConfig& config) {
  if (config.variants < 1 || config.variants > 4) throw InvalidArgument("synth: variants must be 1..4");
  const std::size_t combos = kVerbs.size() * kQuals.size() * kNouns.size();
  if (config.first_family + config.families > combos)
    throw InvalidArgument("synth: at most " + std::to_string(combos) + " families");

  // one fixed permutation of all (verb, qual, noun) combinations per seed
  Rng order_rng(config.seed);
  std::vector<std::uint32_t> order(combos);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = combos; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

  std::vector<RawPair> out;
  for (std::size_t f = config.first_family; f < config.first_family + config.families; ++f) {
    Rng rng(config.seed ^ stable_hash("family" + std::to_string(f)));
    std::uint32_t c = order[f];
    const std::string& noun = kNouns[c % kNouns.size()];
    c /= static_cast<std::uint32_t>(kNouns.size());
    const std::string& qual = kQuals[c % kQuals.size()];
    c /= static_cast<std::uint32_t>(kQuals.size());
    const std::string& verb = kVerbs[c];
    const std::string& limit = pick(kLimits, rng);
    const std::string& helper = pick(kHelpers, rng);
    const std::string& type = pick(kTypes, rng);
    const std::string method = verb + cap(qual) + cap(noun);
    const std::string acc = qual + cap(noun);
    const std::string call = helper + cap(noun);
    const std::string& other = kNouns[rng.below(kNouns.size())];
    const std::vector<std::pair<std::string, std::string>> vars = {
        {"$T", type}, {"$A", acc}, {"$N", noun}, {"$L", limit}, {"$O", other}, {"$C", call}};
    std::string before, after;
    const std::size_t extras = rng.below(4);
    for (std::size_t e = 0; e < extras; ++e) {
      std::string stmt = "    " + expand(kExtras[rng.below(kExtras.size())], vars);
      (rng.below(2) ? before : after) += stmt;
    }

    // variants drawn without replacement so a family's members differ
    std::array<std::size_t, 4> kinds = {0, 1, 2, 3};
    for (std::size_t i = 4; i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);

    for (std::size_t vi = 0; vi < config.variants; ++vi) {
      const std::size_t v = kinds[vi];
      const std::string keyword = (v & 1u) ? "if" : "while";
      const std::string op = (v & 2u) ? ">" : "<";
      std::string code = "public " + type + " " + method + "(" + type + " " + noun + ", " + type + " " + limit + ") {\n";
      code += "    " + type + " " + acc + " = " + noun + ";\n";
      code += before;
      code += "    " + keyword + " (" + acc + " " + op + " " + limit + ") {\n";
      code += "        " + acc + " = " + call + "(" + acc + ");\n";
      code += "    }\n" + after + "    return " + acc + ";\n}\n";

      const auto& phrases = kPhrases[(v & 1u) * 2 + ((v >> 1) & 1u)];
      std::string doc = rng.below(2) ? cap(verb) + "s the " : cap(verb) + " the ";
      if (rng.below(5) != 0) doc += qual + " ";
      doc += noun + " " + pick(phrases, rng) + " " + limit + ".";
      switch (rng.below(4)) {
        case 0: doc += " Returns the " + qual + " " + noun + "."; break;
        case 1: doc += " See {@link " + cap(call) + "}."; break;
        default: break;
      }
      out.push_back({config.id_prefix + "-" + std::to_string(f) + "-" + std::to_string(v), std::move(code),
                     std::move(doc)});
    }
  }
  return out;
}

void write_synth_split(const std::string& train_file, const std::string& test_file, std::size_t train_pairs,
                       std::size_t test_pairs, std::size_t variants, std::uint64_t seed) {
  if (variants < 1 || variants > 4) throw InvalidArgument("synth: variants must be 1..4");
  SynthConfig cfg;
  cfg.variants = variants;
  cfg.seed = seed;
  cfg.families = (test_pairs + variants - 1) / variants;
  cfg.first_family = 0;
  const auto test = synth_pairs(cfg);
  cfg.first_family = cfg.families;
  cfg.families = (train_pairs + variants - 1) / variants;
  const auto train = synth_pairs(cfg);
  write_pairs_jsonl(train_file, train);
  if (!test_file.empty()) write_pairs_jsonl(test_file, test);
}

}  // namespace pscs
