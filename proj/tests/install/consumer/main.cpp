#include <cstdio>

#include "ftso/genotype.hpp"

int main() {
  const auto g = ftso::parse_genotype(
      "genotype v1\nnormal:\n0->2:skip_connect\n1->2:sep_conv_3x3\n"
      "reduce:\n0->2:max_pool_3x3\n1->2:skip_connect\n");
  std::printf("%s", ftso::serialize_genotype(g).c_str());
  return g.normal.size() == 2 ? 0 : 1;
}
