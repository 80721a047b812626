#pragma once

// Hot numeric loops, each as an OpenMP variant plus a serial reference.
// Parallel variants assign every output element to exactly one thread and
// keep the inner accumulation order of the serial code, so results are
// bit-identical to the reference for any thread count. All functions
// accumulate into the output buffer; callers zero it first when they want a
// plain product.

namespace eqm::kernels {

// out[m,n] += a[m,k] . b[k,n]
void mm_nn(const double* a, const double* b, double* out, int m, int k, int n);
void mm_nn_serial(const double* a, const double* b, double* out, int m, int k, int n);
// out[m,n] += a[m,k] . b[n,k]^T
void mm_nt(const double* a, const double* b, double* out, int m, int k, int n);
void mm_nt_serial(const double* a, const double* b, double* out, int m, int k, int n);
// out[m,n] += a[k,m]^T . b[k,n]
void mm_tn(const double* a, const double* b, double* out, int m, int k, int n);
void mm_tn_serial(const double* a, const double* b, double* out, int m, int k, int n);

// Neighbor contraction in two stages.
//   stage: s[j,b,c]  += sum_t kk[j,t,b] * z[j,t,c] * q[j,t]
//   mix:   out[j,cp] += sum_{c,b} w[cp,c,b] * s[j,b,c]
void pc_stage(const double* kk, const double* z, const double* q, double* s,
              int J, int T, int B, int C);
void pc_stage_serial(const double* kk, const double* z, const double* q, double* s,
                     int J, int T, int B, int C);
void pc_mix(const double* w, const double* s, double* out, int J, int B, int C, int Cp);
void pc_mix_serial(const double* w, const double* s, double* out, int J, int B, int C, int Cp);

// gradients of the two stages
// ds[j,b,c] += sum_cp dout[j,cp] * w[cp,c,b]
void pc_back_stage(const double* w, const double* dout, double* ds, int J, int B, int C, int Cp);
void pc_back_stage_serial(const double* w, const double* dout, double* ds,
                          int J, int B, int C, int Cp);
// dw[cp,c,b] += sum_j dout[j,cp] * s[j,b,c]   (ordered sum over j)
void pc_back_w(const double* dout, const double* s, double* dw, int J, int B, int C, int Cp);
void pc_back_w_serial(const double* dout, const double* s, double* dw, int J, int B, int C, int Cp);
// dk[j,t,b] += q[j,t] * sum_c ds[j,b,c] * z[j,t,c]
// dz[j,t,c] += q[j,t] * sum_b ds[j,b,c] * kk[j,t,b]
// dq[j,t]   += sum_{b,c} ds[j,b,c] * kk[j,t,b] * z[j,t,c]
void pc_back_inputs(const double* ds, const double* kk, const double* z, const double* q,
                    double* dk, double* dz, double* dq, int J, int T, int B, int C);
void pc_back_inputs_serial(const double* ds, const double* kk, const double* z, const double* q,
                           double* dk, double* dz, double* dq, int J, int T, int B, int C);

}  // namespace eqm::kernels
