#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "ftso/autograd.hpp"
#include "ftso/supernet.hpp"

namespace ftso::testing {

// A randomly shaped composite expression over a set of leaf tensors that
// reduces to a scalar.
struct GraphCase {
  std::string family;
  std::vector<Tensor> leaves;
  std::set<std::string> primitives;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

// Case `index` of the generator; families rotate with the index so any run of
// at least kFamilies consecutive cases touches every primitive.
GraphCase random_graph(int index, std::uint64_t seed);
inline constexpr int kFamilies = 7;

// Every primitive the generator can emit.
const std::set<std::string>& all_primitives();

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Reverse-mode gradient of the case against central differences over every
// leaf coordinate.
GradcheckResult gradcheck_case(const GraphCase& c, double epsilon = 1e-5);

// Architecture parameters over the full cell space with 4..9 nodes, a random
// candidate subset (always at least one operator other than "none") and
// Gaussian alpha/beta.
ArchParams random_arch_params(std::uint64_t seed);

// Copy with f applied to every alpha and beta entry.
ArchParams transform_arch(const ArchParams& arch, const std::function<double(double)>& f);

}  // namespace ftso::testing
