#include "eqm/kernels.hpp"

#include <cstdint>

namespace eqm::kernels {

namespace {
using std::int64_t;
}

void mm_nn_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[int64_t(i) * k + l] * b[int64_t(l) * n + j];
      out[int64_t(i) * n + j] += acc;
    }
}

void mm_nn(const double* a, const double* b, double* out, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[i * k + l] * b[int64_t(l) * n + j];
      out[i * n + j] += acc;
    }
}

void mm_nt_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[int64_t(i) * k + l] * b[int64_t(j) * k + l];
      out[int64_t(i) * n + j] += acc;
    }
}

void mm_nt(const double* a, const double* b, double* out, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[i * k + l] * b[int64_t(j) * k + l];
      out[i * n + j] += acc;
    }
}

void mm_tn_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[int64_t(l) * m + i] * b[int64_t(l) * n + j];
      out[int64_t(i) * n + j] += acc;
    }
}

void mm_tn(const double* a, const double* b, double* out, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[int64_t(l) * m + i] * b[int64_t(l) * n + j];
      out[i * n + j] += acc;
    }
}

namespace {

inline void pc_stage_row(const double* kk, const double* z, const double* q, double* s,
                         int64_t j, int T, int B, int C) {
  const double* kj = kk + j * T * B;
  const double* zj = z + j * T * C;
  const double* qj = q + j * T;
  double* sj = s + j * B * C;
  for (int t = 0; t < T; ++t) {
    double qt = qj[t];
    for (int b = 0; b < B; ++b) {
      double kb = kj[t * B + b] * qt;
      for (int c = 0; c < C; ++c) sj[b * C + c] += kb * zj[t * C + c];
    }
  }
}

inline void pc_mix_row(const double* w, const double* s, double* out, int64_t j,
                       int B, int C, int Cp) {
  const double* sj = s + j * B * C;
  double* oj = out + j * Cp;
  for (int cp = 0; cp < Cp; ++cp) {
    const double* wc = w + int64_t(cp) * C * B;
    double acc = 0.0;
    for (int c = 0; c < C; ++c)
      for (int b = 0; b < B; ++b) acc += wc[c * B + b] * sj[b * C + c];
    oj[cp] += acc;
  }
}

inline void pc_back_stage_row(const double* w, const double* dout, double* ds, int64_t j,
                              int B, int C, int Cp) {
  const double* dj = dout + j * Cp;
  double* sj = ds + j * B * C;
  for (int cp = 0; cp < Cp; ++cp) {
    const double* wc = w + int64_t(cp) * C * B;
    double d = dj[cp];
    for (int c = 0; c < C; ++c)
      for (int b = 0; b < B; ++b) sj[b * C + c] += d * wc[c * B + b];
  }
}

inline void pc_back_inputs_row(const double* ds, const double* kk, const double* z,
                               const double* q, double* dk, double* dz, double* dq,
                               int64_t j, int T, int B, int C) {
  const double* sj = ds + j * B * C;
  const double* kj = kk + j * T * B;
  const double* zj = z + j * T * C;
  const double* qj = q + j * T;
  double* dkj = dk + j * T * B;
  double* dzj = dz + j * T * C;
  double* dqj = dq + j * T;
  for (int t = 0; t < T; ++t) {
    double qt = qj[t];
    double accq = 0.0;
    for (int b = 0; b < B; ++b) {
      double kb = kj[t * B + b];
      double acck = 0.0;
      for (int c = 0; c < C; ++c) {
        double dsv = sj[b * C + c];
        acck += dsv * zj[t * C + c];
        dzj[t * C + c] += qt * dsv * kb;
      }
      dkj[t * B + b] += qt * acck;
      accq += acck * kb;
    }
    dqj[t] += accq;
  }
}

}  // namespace

void pc_stage_serial(const double* kk, const double* z, const double* q, double* s,
                     int J, int T, int B, int C) {
  for (int64_t j = 0; j < J; ++j) pc_stage_row(kk, z, q, s, j, T, B, C);
}

void pc_stage(const double* kk, const double* z, const double* q, double* s,
              int J, int T, int B, int C) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < J; ++j) pc_stage_row(kk, z, q, s, j, T, B, C);
}

void pc_mix_serial(const double* w, const double* s, double* out, int J, int B, int C, int Cp) {
  for (int64_t j = 0; j < J; ++j) pc_mix_row(w, s, out, j, B, C, Cp);
}

void pc_mix(const double* w, const double* s, double* out, int J, int B, int C, int Cp) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < J; ++j) pc_mix_row(w, s, out, j, B, C, Cp);
}

void pc_back_stage_serial(const double* w, const double* dout, double* ds,
                          int J, int B, int C, int Cp) {
  for (int64_t j = 0; j < J; ++j) pc_back_stage_row(w, dout, ds, j, B, C, Cp);
}

void pc_back_stage(const double* w, const double* dout, double* ds, int J, int B, int C, int Cp) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < J; ++j) pc_back_stage_row(w, dout, ds, j, B, C, Cp);
}

void pc_back_w_serial(const double* dout, const double* s, double* dw,
                      int J, int B, int C, int Cp) {
  for (int cp = 0; cp < Cp; ++cp)
    for (int c = 0; c < C; ++c)
      for (int b = 0; b < B; ++b) {
        double acc = 0.0;
        for (int64_t j = 0; j < J; ++j) acc += dout[j * Cp + cp] * s[(j * B + b) * C + c];
        dw[(int64_t(cp) * C + c) * B + b] += acc;
      }
}

void pc_back_w(const double* dout, const double* s, double* dw, int J, int B, int C, int Cp) {
#pragma omp parallel for schedule(static) collapse(2)
  for (int cp = 0; cp < Cp; ++cp)
    for (int c = 0; c < C; ++c)
      for (int b = 0; b < B; ++b) {
        double acc = 0.0;
        for (int64_t j = 0; j < J; ++j) acc += dout[j * Cp + cp] * s[(j * B + b) * C + c];
        dw[(int64_t(cp) * C + c) * B + b] += acc;
      }
}

void pc_back_inputs_serial(const double* ds, const double* kk, const double* z, const double* q,
                           double* dk, double* dz, double* dq, int J, int T, int B, int C) {
  for (int64_t j = 0; j < J; ++j) pc_back_inputs_row(ds, kk, z, q, dk, dz, dq, j, T, B, C);
}

void pc_back_inputs(const double* ds, const double* kk, const double* z, const double* q,
                    double* dk, double* dz, double* dq, int J, int T, int B, int C) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < J; ++j) pc_back_inputs_row(ds, kk, z, q, dk, dz, dq, j, T, B, C);
}

}  // namespace eqm::kernels
