#include <doctest.h>

#include <sstream>
#include <string>
#include <vector>

#include "pscs/common.hpp"
#include "pscs/corpus.hpp"

using namespace pscs;
using Strings = std::vector<std::string>;

TEST_CASE("extract_query keeps the first sentence without brackets or punctuation") {
  CHECK(extract_query("Removes last camel word. See {@link X}.") == "removes last camel word");
  CHECK(extract_query("") == "");
  CHECK(extract_query("Resolve (DNS) service ip address") == "resolve service ip address");
  CHECK(extract_query("Get the value! Then more.") == "get the value");
  CHECK(extract_query("Uses v1.2 of the API") == "uses v1 2 of the api");
  CHECK(extract_query("Outer (inner (nested) text) kept") == "outer kept");
  CHECK(extract_query("Array [i] and {@code x} gone.") == "array and gone");
}

TEST_CASE("split_subtokens") {
  CHECK(split_subtokens("setTimer") == Strings{"set", "timer"});
  CHECK(split_subtokens("x") == Strings{"x"});
  CHECK(split_subtokens("parseHTTPResponse-v2") == Strings{"parse", "http", "response", "v2"});
  CHECK(split_subtokens("snake_case_name") == Strings{"snake", "case", "name"});
  CHECK(split_subtokens("__init__") == Strings{"init"});
  CHECK(split_subtokens("ALLCAPS") == Strings{"allcaps"});
  CHECK(split_subtokens("toUTF8String") == Strings{"to", "utf8", "string"});
  CHECK(split_subtokens("---").empty());
}

TEST_CASE("split_subtokens properties") {
  Rng rng(3);
  const std::string alphabet = "abcXYZ_-9";
  for (int t = 0; t < 500; ++t) {
    std::string lower, mixed;
    for (auto n = 1 + rng.below(10); n > 0; --n) {
      lower += static_cast<char>('a' + rng.below(26));
      mixed += alphabet[rng.below(alphabet.size())];
    }
    CHECK(split_subtokens(lower) == Strings{lower});
    for (const auto& s : split_subtokens(mixed)) {
      CHECK(!s.empty());
      CHECK(split_subtokens(s) == Strings{s});
      for (char c : s) CHECK(!(c >= 'A' && c <= 'Z'));
    }
  }
}

TEST_CASE("filter_pair needs more than two words") {
  CHECK_FALSE(filter_pair({"a", "", "sets x"}));
  CHECK_FALSE(filter_pair({"a", "", ""}));
  CHECK(filter_pair({"a", "", "get the result of an xml path expression"}));
  CHECK_FALSE(filter_pair({"a", "", "Sets x. And then many more words follow here."}));
  CHECK(count_words("a b  c") == 3);
}

TEST_CASE("build_vocabulary ranks by count then lexicographically") {
  const Strings stream = {"b", "a", "c", "b", "a", "d", "b", "e", "e"};
  const Vocabulary v = build_vocabulary(stream, 2, 100, VocabKind::Word);
  REQUIRE(v.size() == 5);
  CHECK(v.token_of(2) == "b");
  CHECK(v.token_of(3) == "a");
  CHECK(v.token_of(4) == "e");
  CHECK(v.lookup("c") == Vocabulary::kUnk);
  CHECK(v.lookup("b") == 2);

  const Vocabulary capped = build_vocabulary(stream, 1, 3, VocabKind::Word);
  CHECK(capped.size() == 3);
  CHECK(capped.token_of(2) == "b");

  const Vocabulary empty = build_vocabulary({}, 1, 100, VocabKind::Node);
  CHECK(empty.size() == 2);
  CHECK(empty.kind() == VocabKind::Node);
}

TEST_CASE("vocabulary files are deterministic and round trip") {
  const Strings stream = {"get", "set", "get", "value", "set", "get"};
  std::ostringstream a, b;
  build_vocabulary(stream, 1, 100, VocabKind::Word).save(a);
  build_vocabulary(stream, 1, 100, VocabKind::Word).save(b);
  CHECK(a.str() == b.str());
  CHECK(a.str() == "kind:word\ncount:3\nget\nset\nvalue\n");
  std::istringstream in(a.str());
  const Vocabulary back = Vocabulary::load(in);
  CHECK(back == build_vocabulary(stream, 1, 100, VocabKind::Word));

  std::istringstream bad("kind:word\ncount:5\nget\n");
  CHECK_THROWS_AS(Vocabulary::load(bad), FormatError);
}

TEST_CASE("encode_query pads, truncates and falls back to UNK") {
  Vocabulary v;
  for (int i = 2; i < 10; ++i) v.add(i == 5 ? "add" : i == 9 ? "header" : "w" + std::to_string(i));
  const QueryTokens t = encode_query("add header", v, 4);
  CHECK(t.ids == std::vector<std::int32_t>{5, 9, 0, 0});
  CHECK(t.mask == std::vector<std::uint8_t>{1, 1, 0, 0});

  const QueryTokens u = encode_query("qqq", v, 2);
  CHECK(u.ids == std::vector<std::int32_t>{Vocabulary::kUnk, Vocabulary::kPad});
  // camel case splits this into zz / unknown / zz, all unknown
  const QueryTokens z = encode_query("zzUnknownzz", v, 2);
  CHECK(z.ids == std::vector<std::int32_t>{Vocabulary::kUnk, Vocabulary::kUnk});
  CHECK(z.real_count() == 2);

  std::string longer;
  for (int i = 0; i < 21; ++i) longer += "add ";
  const QueryTokens w = encode_query(longer, v, 20);
  CHECK(w.ids.size() == 20);
  CHECK(w.real_count() == 20);

  CHECK_THROWS_AS(encode_query("  ", v, 4), InvalidArgument);
}
