#pragma once

#include <cstdint>
#include <vector>

namespace fedsim::stats {

// Neumaier-compensated summation.
double kahan_sum(const std::vector<double>& v);

double mean(const std::vector<double>& v);
double variance(const std::vector<double>& v);  // population
double stddev(const std::vector<double>& v);

// Population skewness m3 / m2^(3/2); 0 when m2 == 0.
double skewness(const std::vector<double>& v);

// Survival function of the chi-squared distribution.
double chi2_sf(double x, int df);

// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
double ks_2sample_p(std::vector<double> a, std::vector<double> b);

// Pearson chi-squared test of homogeneity across rows of a count table.
// Returns the p-value; columns with zero total are dropped.
double chi2_homogeneity_p(const std::vector<std::vector<int64_t>>& counts);

// Mutual information (nats) of a discrete joint count table.
double mutual_information(const std::vector<std::vector<int64_t>>& joint);

}  // namespace fedsim::stats
