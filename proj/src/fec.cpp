#include "mumimo/fec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mumimo {

LdpcCode LdpcCode::from_alist(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("LdpcCode: cannot open " + path);
    LdpcCode code;
    int max_cd = 0, max_rd = 0;
    is >> code.n_ >> code.m_ >> max_cd >> max_rd;
    if (!is || code.n_ <= 0 || code.m_ <= 0) throw std::runtime_error("LdpcCode: bad alist header");
    std::vector<int> cdeg(code.n_), rdeg(code.m_);
    for (auto& d : cdeg) is >> d;
    for (auto& d : rdeg) is >> d;
    code.var_checks_.resize(code.n_);
    code.check_vars_.resize(code.m_);
    for (int c = 0; c < code.n_; ++c)
        for (int j = 0; j < max_cd; ++j) {
            int r;
            is >> r;
            if (r > 0) code.var_checks_[c].push_back(r - 1);
        }
    for (int r = 0; r < code.m_; ++r)
        for (int j = 0; j < max_rd; ++j) {
            int c;
            is >> c;
            if (c > 0) code.check_vars_[r].push_back(c - 1);
        }
    if (!is) throw std::runtime_error("LdpcCode: truncated alist");
    for (int c = 0; c < code.n_; ++c)
        if (static_cast<int>(code.var_checks_[c].size()) != cdeg[c])
            throw std::runtime_error("LdpcCode: column degree mismatch");
    code.build_encoder();
    return code;
}

const LdpcCode& LdpcCode::wifi_n1296_r12() {
    static LdpcCode code = from_alist(std::string(MUMIMO_DATA_DIR) + "/wifi_ldpc_n1296_r12.alist");
    return code;
}

void LdpcCode::build_encoder() {
    // Reduced row echelon form of H over GF(2), rows as bit-packed words.
    const int words = (n_ + 63) / 64;
    std::vector<std::vector<std::uint64_t>> rows(m_, std::vector<std::uint64_t>(words, 0));
    for (int r = 0; r < m_; ++r)
        for (int c : check_vars_[r]) rows[r][c / 64] |= 1ULL << (c % 64);

    auto get = [&](int r, int c) { return (rows[r][c / 64] >> (c % 64)) & 1ULL; };
    std::vector<char> is_pivot_col(n_, 0);
    int pr = 0;
    pivot_cols_.clear();
    for (int c = 0; c < n_ && pr < m_; ++c) {
        int piv = -1;
        for (int r = pr; r < m_; ++r)
            if (get(r, c)) {
                piv = r;
                break;
            }
        if (piv < 0) continue;
        std::swap(rows[pr], rows[piv]);
        for (int r = 0; r < m_; ++r)
            if (r != pr && get(r, c))
                for (int w = 0; w < words; ++w) rows[r][w] ^= rows[pr][w];
        pivot_cols_.push_back(c);
        is_pivot_col[c] = 1;
        ++pr;
    }
    rank_ = pr;

    info_cols_.clear();
    std::vector<int> info_pos_of_col(n_, -1);
    for (int c = 0; c < n_; ++c)
        if (!is_pivot_col[c]) {
            info_pos_of_col[c] = static_cast<int>(info_cols_.size());
            info_cols_.push_back(c);
        }

    parity_eqs_.assign(rank_, {});
    for (int r = 0; r < rank_; ++r)
        for (int c = 0; c < n_; ++c)
            if (!is_pivot_col[c] && get(r, c)) parity_eqs_[r].push_back(info_pos_of_col[c]);
}

std::vector<std::uint8_t> LdpcCode::encode(const std::vector<std::uint8_t>& info_bits) const {
    if (static_cast<int>(info_bits.size()) != k_info())
        throw DimensionError("LdpcCode::encode: info length mismatch");
    std::vector<std::uint8_t> c(n_, 0);
    for (std::size_t j = 0; j < info_bits.size(); ++j) c[info_cols_[j]] = info_bits[j] & 1;
    for (int r = 0; r < rank_; ++r) {
        std::uint8_t p = 0;
        for (int j : parity_eqs_[r]) p ^= info_bits[j] & 1;
        c[pivot_cols_[r]] = p;
    }
    return c;
}

std::vector<std::uint8_t> LdpcCode::extract_info(const std::vector<std::uint8_t>& codeword) const {
    std::vector<std::uint8_t> u(info_cols_.size());
    for (std::size_t j = 0; j < info_cols_.size(); ++j) u[j] = codeword[info_cols_[j]] & 1;
    return u;
}

bool LdpcCode::check_parity(const std::vector<std::uint8_t>& codeword) const {
    for (int r = 0; r < m_; ++r) {
        std::uint8_t s = 0;
        for (int c : check_vars_[r]) s ^= codeword[c] & 1;
        if (s) return false;
    }
    return true;
}

LdpcCode::DecodeResult LdpcCode::decode(const std::vector<double>& llrs, int max_iter) const {
    if (static_cast<int>(llrs.size()) != n_) throw DimensionError("LdpcCode::decode: llr length mismatch");

    // Internal sign: L = log(P(0)/P(1)), so hard decision is bit = (L < 0).
    std::vector<double> chan(n_);
    for (int c = 0; c < n_; ++c) chan[c] = -llrs[c];

    // Edge storage: per check, messages to its variables.
    std::vector<std::vector<double>> c2v(m_);
    for (int r = 0; r < m_; ++r) c2v[r].assign(check_vars_[r].size(), 0.0);

    std::vector<double> posterior = chan;
    DecodeResult res;
    res.bits.assign(n_, 0);

    auto harden = [&]() {
        for (int c = 0; c < n_; ++c) res.bits[c] = posterior[c] < 0.0 ? 1 : 0;
    };
    harden();
    // With no channel information every message stays zero forever; the
    // all-zero hard decision trivially satisfies parity but carries no
    // information, so it must not count as convergence.
    bool informative = false;
    for (double l : chan)
        if (l != 0.0) informative = true;
    if (!informative) {
        res.converged = false;
        res.iterations = 0;
        return res;
    }
    if (check_parity(res.bits)) {
        res.converged = true;
        res.iterations = 0;
        return res;
    }

    constexpr double kMsgClip = 30.0;
    for (int it = 1; it <= max_iter; ++it) {
        for (int r = 0; r < m_; ++r) {
            const auto& vars = check_vars_[r];
            const std::size_t deg = vars.size();
            // v->c messages reconstructed as posterior minus previous c->v.
            double prod = 1.0;
            int zeros = 0;
            std::vector<double> tanh_half(deg);
            for (std::size_t j = 0; j < deg; ++j) {
                double v2c = posterior[vars[j]] - c2v[r][j];
                v2c = std::clamp(v2c, -kMsgClip, kMsgClip);
                double th = std::tanh(0.5 * v2c);
                tanh_half[j] = th;
                if (std::abs(th) < 1e-15) {
                    ++zeros;
                } else {
                    prod *= th;
                }
            }
            for (std::size_t j = 0; j < deg; ++j) {
                double ext;
                if (zeros > 1 || (zeros == 1 && std::abs(tanh_half[j]) >= 1e-15)) {
                    ext = 0.0;
                } else if (zeros == 1) {
                    ext = prod;
                } else {
                    ext = prod / tanh_half[j];
                }
                ext = std::clamp(ext, -0.9999999999999, 0.9999999999999);
                double newmsg = 2.0 * std::atanh(ext);
                double v2c = std::clamp(posterior[vars[j]] - c2v[r][j], -kMsgClip, kMsgClip);
                posterior[vars[j]] = v2c + newmsg;  // will be rebuilt below
                c2v[r][j] = newmsg;
            }
        }
        // Rebuild posteriors from channel plus all incoming messages for stability.
        posterior = chan;
        for (int r = 0; r < m_; ++r)
            for (std::size_t j = 0; j < check_vars_[r].size(); ++j)
                posterior[check_vars_[r][j]] += c2v[r][j];

        harden();
        res.iterations = it;
        if (check_parity(res.bits)) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

}  // namespace mumimo
