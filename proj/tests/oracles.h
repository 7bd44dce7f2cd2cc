#pragma once

// Independent reference implementations. Deliberately naive: direct loops,
// no shared code with the library beyond plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

// Every monotone path from (0,0) to (n-1,m-1) with steps (1,0),(0,1),(1,1),
// costs summed in path order; minimum returned.
inline double dtwBruteForce(std::size_t n, std::size_t m, const std::function<double(std::size_t, std::size_t)>& cost) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += cost(i, j);
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n && j + 1 < m) {
      walk(i + 1, j + 1, acc);
    }
    if (j + 1 < m) {
      walk(i, j + 1, acc);
    }
    if (i + 1 < n) {
      walk(i + 1, j, acc);
    }
  };
  walk(0, 0, 0.0);
  return best;
}

// Term-by-term gloss supervised contrastive loss: for each distinct gloss i,
// f(i) is the sample with the most occurrences (lowest index on ties);
// A(i) = samples containing i other than f(i); B(i) = samples without i.
inline double glossSupCon(const Matrix& z, const std::vector<std::vector<int>>& glosses, double tau) {
  const std::size_t n = z.size();
  std::set<int> vocab;
  for (const auto& g : glosses) {
    vocab.insert(g.begin(), g.end());
  }
  double loss = 0.0;
  for (int gloss : vocab) {
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t s = 0; s < n; ++s) {
      counts[s] = static_cast<std::size_t>(std::count(glosses[s].begin(), glosses[s].end(), gloss));
    }
    std::size_t f = 0;
    for (std::size_t s = 1; s < n; ++s) {
      if (counts[s] > counts[f]) {
        f = s;
      }
    }
    std::vector<std::size_t> a;
    std::vector<std::size_t> b;
    for (std::size_t s = 0; s < n; ++s) {
      if (counts[s] > 0 && s != f) {
        a.push_back(s);
      } else if (counts[s] == 0) {
        b.push_back(s);
      }
    }
    if (a.empty() || b.empty()) {
      continue;
    }
    double num = 0.0;
    for (std::size_t s : a) {
      num += std::exp(dot(z[f], z[s]) / tau);
    }
    num /= static_cast<double>(a.size());
    double den = 0.0;
    for (std::size_t s : b) {
      den += std::exp(dot(z[f], z[s]) / tau);
    }
    loss += -std::log(num / den);
  }
  return loss;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

// Mean over unordered pairs i < j of (sim(g_i, g_j) - sim(s_i, s_j))^2.
inline double sbertSupCon(const Matrix& projected, const Matrix& sentences) {
  const std::size_t n = projected.size();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = cosine(projected[i], projected[j]) - cosine(sentences[i], sentences[j]);
      total += d * d;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

// Rodrigues: rotate v by angle about the unit axis.
inline std::array<double, 3> rodrigues(const std::array<double, 3>& axis, double angle, const std::array<double, 3>& v) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const std::array<double, 3> kxv{axis[1] * v[2] - axis[2] * v[1], axis[2] * v[0] - axis[0] * v[2], axis[0] * v[1] - axis[1] * v[0]};
  const double kv = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    out[i] = v[i] * c + kxv[i] * s + axis[i] * kv * (1.0 - c);
  }
  return out;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline std::array<std::array<double, 3>, 3> rotationMatrix(double w, double x, double y, double z) {
  return {{
      {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
      {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
      {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)},
  }};
}

} // namespace oracle
