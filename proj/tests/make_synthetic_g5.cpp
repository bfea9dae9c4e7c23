// Writes a synthetic G5-shaped survey CSV to stdout.
//   make_synthetic_g5 [n] [seed]

#include <cstdlib>
#include <iostream>

#include "support/synthetic.hpp"

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 4278;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1;
  std::cout << spatial_cpf::synth::synthetic_g5_csv(n, seed);
}
