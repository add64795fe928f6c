#ifndef MUMIMO_FEC_HPP
#define MUMIMO_FEC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mumimo/common.hpp"

namespace mumimo {

// Quasi-cyclic LDPC code loaded from an alist file, with a generic GF(2)
// systematic encoder and a sum-product belief-propagation decoder.
class LdpcCode {
  public:
    static LdpcCode from_alist(const std::string& path);
    // Bundled 802.11n length-1296 rate-1/2 code.
    static const LdpcCode& wifi_n1296_r12();

    int n() const { return n_; }
    int m() const { return m_; }
    int k_info() const { return n_ - rank_; }
    double rate() const { return static_cast<double>(k_info()) / n_; }

    std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& info_bits) const;
    std::vector<std::uint8_t> extract_info(const std::vector<std::uint8_t>& codeword) const;
    bool check_parity(const std::vector<std::uint8_t>& codeword) const;

    struct DecodeResult {
        std::vector<std::uint8_t> bits;
        bool converged = false;
        int iterations = 0;
    };
    // llrs use the global convention log(P(b=1)/P(b=0)), length n.
    DecodeResult decode(const std::vector<double>& llrs, int max_iter = 40) const;

  private:
    int n_ = 0, m_ = 0, rank_ = 0;
    std::vector<std::vector<int>> check_vars_;  // per check, variable indices
    std::vector<std::vector<int>> var_checks_;  // per variable, check indices
    std::vector<int> info_cols_;                // non-pivot columns
    std::vector<int> pivot_cols_;               // pivot column per reduced row
    std::vector<std::vector<int>> parity_eqs_;  // per pivot row, info-col positions

    void build_encoder();
};

}  // namespace mumimo

#endif
