#include <filesystem>
#include <random>

#include "doctest.h"
#include "ftso/error.hpp"
#include "ftso/genotype.hpp"
#include "ftso/harness.hpp"

using namespace ftso;

namespace {

Genotype sample() {
  Genotype g;
  g.normal = {{0, 2, OperatorKind::SepConv3x3}, {1, 2, OperatorKind::SkipConnect},
              {0, 3, OperatorKind::MaxPool3x3}, {2, 3, OperatorKind::DilConv5x5}};
  g.reduce = {{0, 2, OperatorKind::AvgPool3x3}, {1, 2, OperatorKind::SepConv5x5},
              {1, 3, OperatorKind::DilConv3x3}, {2, 3, OperatorKind::SkipConnect}};
  return g;
}

}  // namespace

TEST_CASE("serialize format is exact") {
  const std::string text =
      "genotype v1\nnormal:\n0->2:sep_conv_3x3\n1->2:skip_connect\n0->3:max_pool_3x3\n"
      "2->3:dil_conv_5x5\nreduce:\n0->2:avg_pool_3x3\n1->2:sep_conv_5x5\n1->3:dil_conv_3x3\n"
      "2->3:skip_connect\n";
  CHECK(serialize_genotype(sample()) == text);
  CHECK(parse_genotype(text) == sample());
  CHECK(sample().nodes() == 5);
}

TEST_CASE("validation rules") {
  CHECK_NOTHROW(validate_genotype(sample()));
  auto broken = [](auto edit) {
    Genotype g = sample();
    edit(g);
    return g;
  };
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) { g.normal[0].op = OperatorKind::Zero; })), DataError);
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) { g.normal[1].src = 0; })), DataError);
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) { g.normal[3].src = 3; })), DataError);
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) { g.normal.pop_back(); })), DataError);
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) {
                    for (auto& e : g.normal)
                      if (e.dst == 3) e.dst = 4;
                    for (auto& e : g.reduce)
                      if (e.dst == 3) e.dst = 4;
                  })),
                  DataError);
  CHECK_THROWS_AS(validate_genotype(broken([](Genotype& g) {
                    g.reduce.push_back({0, 4, OperatorKind::SkipConnect});
                    g.reduce.push_back({1, 4, OperatorKind::SkipConnect});
                  })),
                  DataError);
}

TEST_CASE("relabel keeps connectivity") {
  Genotype r = relabel(sample(), OperatorKind::SepConv3x3);
  REQUIRE(r.normal.size() == sample().normal.size());
  for (std::size_t i = 0; i < r.normal.size(); ++i) {
    CHECK(r.normal[i].src == sample().normal[i].src);
    CHECK(r.normal[i].op == OperatorKind::SepConv3x3);
  }
}

TEST_CASE("file round trip and missing file") {
  auto dir = std::filesystem::path(FTSO_TEST_TMP) / "genotype";
  std::filesystem::create_directories(dir);
  auto path = (dir / "g.txt").string();
  write_genotype_file(path, sample());
  CHECK(read_genotype_file(path) == sample());
  CHECK_THROWS_AS(read_genotype_file((dir / "absent.txt").string()), DataError);
}

TEST_CASE("random genotypes round trip") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (int n : {4, 5, 7, 9}) {
      Genotype g = random_topology(n, kAllOperators[s % 7], s);
      CHECK(g.nodes() == n);
      CHECK_NOTHROW(validate_genotype(g));
      CHECK(parse_genotype(serialize_genotype(g)) == g);
    }
  }
}

TEST_CASE("mutated genotype text either parses to a valid genotype or raises DataError") {
  const std::string base = serialize_genotype(random_topology(7, OperatorKind::SepConv3x3, 1));
  const std::string alphabet = "0123456789->:_\nabcnoregsiptv ";
  std::mt19937_64 rng(17);
  int rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::string text = base;
    const int edits = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < edits; ++e) {
      const std::size_t pos = rng() % text.size();
      switch (rng() % 3) {
        case 0: text[pos] = alphabet[rng() % alphabet.size()]; break;
        case 1: text.erase(pos, 1); break;
        default: text.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
      }
    }
    try {
      Genotype g = parse_genotype(text);
      validate_genotype(g);
      CHECK(serialize_genotype(g) == text);
    } catch (const DataError&) {
      ++rejected;
    }
  }
  CHECK(rejected > 1000);
}
