#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

// Branch-free single-precision kernels that the compiler can vectorise.
// Double precision always goes through the C library.
namespace tripcast::fastmath {

// Rational minimax erf, a few ulp over [-4, 4] (saturated outside).
inline float erf(float x) {
  x = x < -4.0f ? -4.0f : (x > 4.0f ? 4.0f : x);
  const float x2 = x * x;
  float p = x2 * -2.72614225801306e-10f + 2.77068142495902e-08f;
  p = x2 * p - 2.10102402082508e-06f;
  p = x2 * p - 5.69250639462346e-05f;
  p = x2 * p - 7.34990630326855e-04f;
  p = x2 * p - 2.95459980854025e-03f;
  p = x2 * p - 1.60960333262415e-02f;
  p = x * p;
  float q = x2 * -1.45660718464996e-05f - 2.13374055278905e-04f;
  q = x2 * q - 1.68282697438203e-03f;
  q = x2 * q - 7.37332916720468e-03f;
  q = x2 * q - 1.42647390514189e-02f;
  return p / q;
}

// Cody-Waite reduction plus a degree-6 polynomial; about 2 ulp for
// x in [-87, 88]. Smaller inputs flush to zero.
inline float exp(float x) {
  const bool underflow = x < -87.0f;
  x = x > 88.0f ? 88.0f : (underflow ? -87.0f : x);
  // Adding 1.5 * 2^23 rounds to the nearest integer without a library call.
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  float r = x - n * 0.693359375f;
  r = r + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(n) + 127) << 23;
  float scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return underflow ? 0.0f : p * scale;
}

inline double erf(double x) { return std::erf(x); }
inline double exp(double x) { return std::exp(x); }

}  // namespace tripcast::fastmath
