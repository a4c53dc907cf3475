#pragma once

#include <cstdint>
#include <vector>

#include "doorbench/geometry.hpp"

namespace doorbench::kernels {

/// C[m x n] = A[m x k] * B[k x n] (+ C when accumulate), all row-major.
void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

/// C[m x n] = A^T * B with A stored [k x m].
void matmul_at(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void matmul_at(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

/// C[m x n] = A * B^T with B stored [n x k].
void matmul_bt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void matmul_bt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

/// Farthest-point sampling over xyz triples. Returns indices in selection
/// order starting at `start`; ties go to the lowest index.
std::vector<int> farthest_point_sample(const std::vector<float>& xyz, int count, int start);

/// Indices of the k points nearest each query, ordered by (distance, index).
/// Row-major queries x k.
std::vector<int> knn(const std::vector<float>& xyz, const std::vector<float>& queries, int k);

/// Pinhole raycaster. Rays leave `origin` through pixel centres; the result is
/// the z-depth of the nearest hit along `forward`, or +inf.
struct RayGrid {
  Vec3 origin;
  Mat3 camera_to_world;  // columns: right, down, forward
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double far = 1e9;
};

std::vector<float> raycast(const RayGrid& grid, const std::vector<Solid>& solids);

namespace reference {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
std::vector<int> farthest_point_sample(const std::vector<float>& xyz, int count, int start);
std::vector<int> knn(const std::vector<float>& xyz, const std::vector<float>& queries, int k);
std::vector<float> raycast(const RayGrid& grid, const std::vector<Solid>& solids);

}  // namespace reference

}  // namespace doorbench::kernels
