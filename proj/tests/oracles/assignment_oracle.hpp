#pragma once

// Exhaustive maximum-score permutation search. Among equal totals the
// lexicographically smallest permutation wins, since permutations are visited
// in lexicographic order and only a strictly larger total replaces the best.

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <vector>

namespace oracle {

struct BruteAssignment {
  std::vector<int> permutation;
  double total = 0.0;
};

inline BruteAssignment brute_force_assignment(const Eigen::MatrixXd& score) {
  const int k = static_cast<int>(score.rows());
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  BruteAssignment best;
  bool first = true;
  do {
    double total = 0.0;
    for (int r = 0; r < k; ++r) total += score(r, perm[r]);
    if (first || total > best.total) {
      best.total = total;
      best.permutation = perm;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace oracle
