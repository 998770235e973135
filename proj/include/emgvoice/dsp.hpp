#pragma once

#include <Eigen/Core>

#include <complex>
#include <vector>

namespace emgvoice::dsp {

using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

// Periodic Hann window of length n.
Eigen::VectorXd hann(int n);

// One-sided spectrum (n/2 + 1 bins) of a real frame zero-padded to n_fft.
Eigen::VectorXcd rfft(const Eigen::Ref<const Eigen::VectorXd>& frame, int n_fft);

// Inverse of rfft; returns n_fft real samples.
Eigen::VectorXd irfft(const Eigen::Ref<const Eigen::VectorXcd>& spectrum, int n_fft);

// Frames start at multiples of `hop` with no centering; frame k covers
// samples [k*hop, k*hop + win). Rows are frames, columns are bins.
struct StftConfig {
  int win = 400;
  int hop = 160;
  int n_fft = 512;
};

int frame_count(Eigen::Index n_samples, int win, int hop);

ComplexMatrix stft(const Eigen::Ref<const Eigen::VectorXd>& x, const StftConfig& cfg);

// Weighted overlap-add inverse with the same Hann window, normalized by the
// summed squared window. Output has `length` samples.
Eigen::VectorXd istft(const ComplexMatrix& spec, const StftConfig& cfg, Eigen::Index length);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x (n_fft/2 + 1) triangular filters equally spaced on the mel scale.
Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double sample_rate, double f_min,
                               double f_max);

// Orthonormal DCT-II matrix (n_out x n_in); its transpose is the inverse.
Eigen::MatrixXd dct_matrix(int n_out, int n_in);

}  // namespace emgvoice::dsp
