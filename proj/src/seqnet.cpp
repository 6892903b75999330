#include "slamkit/seqnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <json.hpp>

#include "slamkit/error.hpp"
#include "slamkit/metrics.hpp"

namespace slamkit::seqnet {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const MatrixXd>;
using MMap = Eigen::Map<MatrixXd>;
using CVec = Eigen::Map<const VectorXd>;
using MVec = Eigen::Map<VectorXd>;

constexpr std::array<const char*, kNumInputs> kInputNames{
    "token", "pos", "format", "exercise_key", "dep_label", "dep_token", "user", "client", "session", "countries"};

// first input: token, pos, format, correct, exercise_key
constexpr std::array<Input, 4> kEmb1Inputs{Input::token, Input::pos, Input::format, Input::exercise_key};
// crossed with correct
constexpr std::array<Input, 4> kCrossInputs{Input::token, Input::pos, Input::format, Input::exercise_key};
constexpr std::array<Input, 6> kEmb2Inputs{Input::token,     Input::pos,       Input::format,
                                           Input::dep_label, Input::dep_token, Input::user};

constexpr std::size_t kNumScalars = kNumInputs + 2;

std::size_t ix(Input i) noexcept { return static_cast<std::size_t>(i); }

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

struct Slot {
    std::size_t off = 0;
    Index rows = 0;
    Index cols = 0;
};

struct Layout {
    Index E = 0, H = 0, R = 0, F = 0, D1 = 0, D2 = 0, DZ = 0;
    std::array<Slot, 4> emb1;  // token, pos, format, exercise_key
    Slot emb1_correct;
    Slot cross;
    std::array<Slot, 6> emb2;
    std::array<Slot, kNumInputs> scalar;
    Slot in_W, in_b;
    std::array<std::array<std::array<Slot, 3>, 2>, 2> lstm;  // [layer][direction][W, U, b]
    Slot v, P, W1, b1, W2, b2, w3, b3;
};

Slot slot_of(const Net& net, const std::string& name) {
    const auto& t = net.tensor(name);
    return Slot{t.offset, static_cast<Index>(t.rows), static_cast<Index>(t.cols)};
}

Layout layout_of(const Net& net) {
    const auto& c = net.config();
    Layout L;
    L.E = c.embed_dim;
    L.H = c.recurrent_units;
    L.R = 2 * L.H;
    L.F = c.ff_units;
    L.D1 = 9 * L.E + static_cast<Index>(kNumNumeric);
    L.D2 = 6 * L.E + static_cast<Index>(kNumNumeric);
    L.DZ = L.D2 + static_cast<Index>(kNumScalars);
    for (std::size_t k = 0; k < kEmb1Inputs.size(); ++k)
        L.emb1[k] = slot_of(net, std::string("emb1.") + kInputNames[ix(kEmb1Inputs[k])]);
    L.emb1_correct = slot_of(net, "emb1.correct");
    L.cross = slot_of(net, "cross");
    for (std::size_t k = 0; k < kEmb2Inputs.size(); ++k)
        L.emb2[k] = slot_of(net, std::string("emb2.") + kInputNames[ix(kEmb2Inputs[k])]);
    for (std::size_t k = 0; k < kNumInputs; ++k) L.scalar[k] = slot_of(net, std::string("scalar.") + kInputNames[k]);
    L.in_W = slot_of(net, "in.W");
    L.in_b = slot_of(net, "in.b");
    for (int l = 0; l < 2; ++l)
        for (int d = 0; d < 2; ++d) {
            const auto pre = fmt::format("lstm{}.{}.", l + 1, d == 0 ? "fwd" : "bwd");
            L.lstm[l][d] = {slot_of(net, pre + "W"), slot_of(net, pre + "U"), slot_of(net, pre + "b")};
        }
    L.v = slot_of(net, "state.v");
    L.P = slot_of(net, "state.P");
    L.W1 = slot_of(net, "ff1.W");
    L.b1 = slot_of(net, "ff1.b");
    L.W2 = slot_of(net, "ff2.W");
    L.b2 = slot_of(net, "ff2.b");
    L.w3 = slot_of(net, "ff3.w");
    L.b3 = slot_of(net, "ff3.b");
    return L;
}

CMap cm(const double* base, const Slot& s) { return CMap(base + s.off, s.rows, s.cols); }
MMap mm(double* base, const Slot& s) { return MMap(base + s.off, s.rows, s.cols); }
CVec cv(const double* base, const Slot& s) { return CVec(base + s.off, s.rows * s.cols); }
MVec mv(double* base, const Slot& s) { return MVec(base + s.off, s.rows * s.cols); }

std::size_t cross_bucket(std::size_t kind, std::int32_t id, int correct, std::size_t buckets) noexcept {
    std::uint64_t key = (static_cast<std::uint64_t>(kind) << 56) ^
                        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)) << 2) ^
                        static_cast<std::uint64_t>(correct);
    return static_cast<std::size_t>(splitmix64(key) % buckets);
}

VectorXd sigmoid(const VectorXd& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

void check_finite(const MatrixXd& m, const char* layer) {
    if (!m.allFinite()) throw std::runtime_error(fmt::format("non-finite activation in layer {}", layer));
}

struct LstmCache {
    MatrixXd I, F, O, G, C, Hs;  // H x T, indexed by time
};

void lstm_forward(const CMap& W, const CMap& U, const CVec& b, const MatrixXd& X, bool reverse, LstmCache& c) {
    const Index T = X.cols();
    const Index H = U.cols();
    MatrixXd Z = W * X;
    Z.colwise() += b;
    c.I.resize(H, T);
    c.F.resize(H, T);
    c.O.resize(H, T);
    c.G.resize(H, T);
    c.C.resize(H, T);
    c.Hs.resize(H, T);
    VectorXd h = VectorXd::Zero(H);
    VectorXd cell = VectorXd::Zero(H);
    for (Index k = 0; k < T; ++k) {
        const Index t = reverse ? T - 1 - k : k;
        const VectorXd z = Z.col(t) + U * h;
        const VectorXd i = sigmoid(z.segment(0, H));
        const VectorXd f = sigmoid(z.segment(H, H));
        const VectorXd o = sigmoid(z.segment(2 * H, H));
        const VectorXd g = z.segment(3 * H, H).array().tanh().matrix();
        cell = (f.array() * cell.array() + i.array() * g.array()).matrix();
        h = (o.array() * cell.array().tanh()).matrix();
        c.I.col(t) = i;
        c.F.col(t) = f;
        c.O.col(t) = o;
        c.G.col(t) = g;
        c.C.col(t) = cell;
        c.Hs.col(t) = h;
    }
}

// Accumulates parameter gradients and adds the input gradient into dX.
void lstm_backward(const CMap& W, const CMap& U, MMap dW, MMap dU, MVec db, const MatrixXd& X, bool reverse,
                   const LstmCache& c, const MatrixXd& dH, MatrixXd& dX) {
    const Index T = X.cols();
    const Index H = U.cols();
    MatrixXd dZ(4 * H, T);
    MatrixXd Hprev = MatrixXd::Zero(H, T);
    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    const VectorXd zero = VectorXd::Zero(H);
    for (Index k = 0; k < T; ++k) {
        const Index t = reverse ? k : T - 1 - k;
        const Index tp = reverse ? t + 1 : t - 1;
        const bool has_prev = tp >= 0 && tp < T;
        const auto i = c.I.col(t).array();
        const auto f = c.F.col(t).array();
        const auto o = c.O.col(t).array();
        const auto g = c.G.col(t).array();
        const VectorXd c_prev = has_prev ? VectorXd(c.C.col(tp)) : zero;
        if (has_prev) Hprev.col(t) = c.Hs.col(tp);
        const VectorXd dh = dH.col(t) + dh_next;
        const Eigen::ArrayXd tc = c.C.col(t).array().tanh();
        const Eigen::ArrayXd d_o = dh.array() * tc;
        const Eigen::ArrayXd dc = dc_next.array() + dh.array() * o * (1.0 - tc * tc);
        dZ.col(t).segment(0, H) = (dc * g * i * (1.0 - i)).matrix();
        dZ.col(t).segment(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
        dZ.col(t).segment(2 * H, H) = (d_o * o * (1.0 - o)).matrix();
        dZ.col(t).segment(3 * H, H) = (dc * i * (1.0 - g * g)).matrix();
        dc_next = (dc * f).matrix();
        dh_next.noalias() = U.transpose() * dZ.col(t);
    }
    dW.noalias() += dZ * X.transpose();
    dU.noalias() += dZ * Hprev.transpose();
    db += dZ.rowwise().sum();
    dX.noalias() += W.transpose() * dZ;
}

struct Cache {
    Index T = 0;
    MatrixXd X1, X2;  // after dropout
    MatrixXd M1, M2;  // embedding dropout scales; empty when off
    std::array<MatrixXd, 3> U;
    std::array<std::array<LstmCache, 2>, 2> lstm;
    std::array<MatrixXd, 2> Hcat;
    std::array<MatrixXd, 2> Mr;
    MatrixXd PX;
    VectorXd s1, s2;
    MatrixXd Z0;
    MatrixXd A1, A2;    // tanh outputs before dropout
    MatrixXd A1d, A2d;  // after dropout
    MatrixXd M3, M4;
    VectorXd logit;
};

MatrixXd dropout_mask(Index rows, Index cols, double p, Rng& rng) {
    MatrixXd m(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r) m(r, c) = rng.uniform() < p ? 0.0 : keep;
    return m;
}

class Engine {
public:
    Engine(const Net& net) : net_(net), L_(layout_of(net)), p_(net.params().data()) {}

    void check_ids(const Step& s) const {
        const auto& sizes = net_.sizes();
        for (std::size_t k = 0; k < kNumInputs; ++k)
            if (s.ids[k] < 0 || static_cast<std::size_t>(s.ids[k]) >= sizes[k])
                throw std::out_of_range(fmt::format("{} id {} outside embedding table of {}", kInputNames[k],
                                                    s.ids[k], sizes[k]));
        if (s.correct < 0 || s.correct > kUnknown) throw std::out_of_range("correct input outside {0,1,2}");
    }

    void forward(const Sequence& seq, Rng* rng, Cache& c) const {
        const auto& cfg = net_.config();
        const bool drop = rng != nullptr && cfg.dropout_p > 0.0;
        const Index T = static_cast<Index>(seq.size());
        const Index E = L_.E;
        c.T = T;
        c.X1.resize(L_.D1, T);
        c.X2.resize(L_.D2, T);
        for (Index t = 0; t < T; ++t) {
            const Step& s = seq[static_cast<std::size_t>(t)];
            check_ids(s);
            Index r = 0;
            for (std::size_t k = 0; k < 4; ++k) {
                if (k == 3) {
                    c.X1.col(t).segment(r, E) = cm(p_, L_.emb1_correct).col(s.correct);
                    r += E;
                }
                c.X1.col(t).segment(r, E) = cm(p_, L_.emb1[k]).col(s.ids[ix(kEmb1Inputs[k])]);
                r += E;
            }
            for (std::size_t k = 0; k < 4; ++k) {
                const auto b = cross_bucket(k, s.ids[ix(kCrossInputs[k])], s.correct, cfg.cross_buckets);
                c.X1.col(t).segment(r, E) = cm(p_, L_.cross).col(static_cast<Index>(b));
                r += E;
            }
            for (std::size_t k = 0; k < kNumNumeric; ++k) c.X1(r + static_cast<Index>(k), t) = s.num[k];
            r = 0;
            for (std::size_t k = 0; k < kEmb2Inputs.size(); ++k) {
                c.X2.col(t).segment(r, E) = cm(p_, L_.emb2[k]).col(s.ids[ix(kEmb2Inputs[k])]);
                r += E;
            }
            for (std::size_t k = 0; k < kNumNumeric; ++k) c.X2(r + static_cast<Index>(k), t) = s.num[k];
        }
        if (drop) {
            c.M1 = dropout_mask(9 * E, T, cfg.dropout_p, *rng);
            c.M2 = dropout_mask(6 * E, T, cfg.dropout_p, *rng);
            c.X1.topRows(9 * E).array() *= c.M1.array();
            c.X2.topRows(6 * E).array() *= c.M2.array();
        } else {
            c.M1.resize(0, 0);
            c.M2.resize(0, 0);
        }

        c.U[0] = cm(p_, L_.in_W) * c.X1;
        c.U[0].colwise() += cv(p_, L_.in_b);
        check_finite(c.U[0], "input projection");
        for (int l = 0; l < 2; ++l) {
            const auto& fw = L_.lstm[l][0];
            lstm_forward(cm(p_, fw[0]), cm(p_, fw[1]), cv(p_, fw[2]), c.U[l], false, c.lstm[l][0]);
            c.Hcat[l] = MatrixXd::Zero(L_.R, T);
            c.Hcat[l].topRows(L_.H) = c.lstm[l][0].Hs;
            if (cfg.bidirectional) {
                const auto& bw = L_.lstm[l][1];
                lstm_forward(cm(p_, bw[0]), cm(p_, bw[1]), cv(p_, bw[2]), c.U[l], true, c.lstm[l][1]);
                c.Hcat[l].bottomRows(L_.H) = c.lstm[l][1].Hs;
            }
            if (drop) {
                c.Mr[l] = dropout_mask(L_.R, T, cfg.dropout_p, *rng);
                c.U[l + 1] = c.U[l] + (c.Hcat[l].array() * c.Mr[l].array()).matrix();
            } else {
                c.Mr[l].resize(0, 0);
                c.U[l + 1] = c.U[l] + c.Hcat[l];
            }
            check_finite(c.U[l + 1], l == 0 ? "recurrent layer 1" : "recurrent layer 2");
        }

        const MatrixXd& S = c.U[2];
        c.s1 = S.transpose() * cv(p_, L_.v);
        c.PX = cm(p_, L_.P) * c.X2;
        c.s2 = (S.array() * c.PX.array()).colwise().sum().transpose().matrix();

        c.Z0.resize(L_.DZ, T);
        c.Z0.topRows(L_.D2) = c.X2;
        c.Z0.row(L_.D2) = c.s1.transpose();
        c.Z0.row(L_.D2 + 1) = c.s2.transpose();
        for (Index t = 0; t < T; ++t) {
            const Step& s = seq[static_cast<std::size_t>(t)];
            for (std::size_t k = 0; k < kNumInputs; ++k)
                c.Z0(L_.D2 + 2 + static_cast<Index>(k), t) = p_[L_.scalar[k].off + static_cast<std::size_t>(s.ids[k])];
        }

        MatrixXd pre1 = cm(p_, L_.W1) * c.Z0;
        pre1.colwise() += cv(p_, L_.b1);
        c.A1 = pre1.array().tanh().matrix();
        if (drop) {
            c.M3 = dropout_mask(L_.F, T, cfg.dropout_p, *rng);
            c.A1d = (c.A1.array() * c.M3.array()).matrix();
        } else {
            c.A1d = c.A1;
        }
        MatrixXd pre2 = cm(p_, L_.W2) * c.A1d;
        pre2.colwise() += cv(p_, L_.b2);
        c.A2 = pre2.array().tanh().matrix();
        if (drop) {
            c.M4 = dropout_mask(L_.F, T, cfg.dropout_p, *rng);
            c.A2d = (c.A2.array() * c.M4.array()).matrix();
        } else {
            c.A2d = c.A2;
        }
        check_finite(c.A2d, "feed-forward");
        const VectorXd out = (c.A2d.transpose() * cv(p_, L_.w3)).array() + p_[L_.b3.off];
        // logit = every scalar plus the head output
        c.logit = out + c.Z0.bottomRows(static_cast<Index>(kNumScalars)).colwise().sum().transpose();
        check_finite(c.logit, "output");
    }

    void backward(const Sequence& seq, const Cache& c, const VectorXd& dlogit, double* g) const {
        const auto& cfg = net_.config();
        const Index T = c.T;
        const Index E = L_.E;

        // head
        mv(g, L_.w3) += c.A2d * dlogit;
        g[L_.b3.off] += dlogit.sum();
        MatrixXd dA2 = cv(p_, L_.w3) * dlogit.transpose();
        if (c.M4.size() > 0) dA2.array() *= c.M4.array();
        const MatrixXd dpre2 = (dA2.array() * (1.0 - c.A2.array().square())).matrix();
        mm(g, L_.W2).noalias() += dpre2 * c.A1d.transpose();
        mv(g, L_.b2) += dpre2.rowwise().sum();
        MatrixXd dA1 = cm(p_, L_.W2).transpose() * dpre2;
        if (c.M3.size() > 0) dA1.array() *= c.M3.array();
        const MatrixXd dpre1 = (dA1.array() * (1.0 - c.A1.array().square())).matrix();
        mm(g, L_.W1).noalias() += dpre1 * c.Z0.transpose();
        mv(g, L_.b1) += dpre1.rowwise().sum();
        MatrixXd dZ0 = cm(p_, L_.W1).transpose() * dpre1;
        dZ0.bottomRows(static_cast<Index>(kNumScalars)).rowwise() += dlogit.transpose();

        MatrixXd dX2 = dZ0.topRows(L_.D2);
        const VectorXd ds1 = dZ0.row(L_.D2).transpose();
        const VectorXd ds2 = dZ0.row(L_.D2 + 1).transpose();
        for (Index t = 0; t < T; ++t) {
            const Step& s = seq[static_cast<std::size_t>(t)];
            for (std::size_t k = 0; k < kNumInputs; ++k)
                g[L_.scalar[k].off + static_cast<std::size_t>(s.ids[k])] += dZ0(L_.D2 + 2 + static_cast<Index>(k), t);
        }

        // user-state projections
        const MatrixXd& S = c.U[2];
        mv(g, L_.v) += S * ds1;
        MatrixXd dS = cv(p_, L_.v) * ds1.transpose();
        dS.noalias() += (c.PX.array().rowwise() * ds2.transpose().array()).matrix();
        const MatrixXd dPX = (S.array().rowwise() * ds2.transpose().array()).matrix();
        mm(g, L_.P).noalias() += dPX * c.X2.transpose();
        dX2.noalias() += cm(p_, L_.P).transpose() * dPX;

        // recurrent stack
        MatrixXd dU = dS;
        for (int l = 1; l >= 0; --l) {
            MatrixXd dHcat = dU;
            if (c.Mr[l].size() > 0) dHcat.array() *= c.Mr[l].array();
            MatrixXd dIn = dU;
            const auto& fw = L_.lstm[l][0];
            lstm_backward(cm(p_, fw[0]), cm(p_, fw[1]), mm(g, fw[0]), mm(g, fw[1]), mv(g, fw[2]), c.U[l], false,
                          c.lstm[l][0], dHcat.topRows(L_.H), dIn);
            if (cfg.bidirectional) {
                const auto& bw = L_.lstm[l][1];
                lstm_backward(cm(p_, bw[0]), cm(p_, bw[1]), mm(g, bw[0]), mm(g, bw[1]), mv(g, bw[2]), c.U[l],
                              true, c.lstm[l][1], dHcat.bottomRows(L_.H), dIn);
            }
            dU = std::move(dIn);
        }
        mm(g, L_.in_W).noalias() += dU * c.X1.transpose();
        mv(g, L_.in_b) += dU.rowwise().sum();
        MatrixXd dX1 = cm(p_, L_.in_W).transpose() * dU;
        if (c.M1.size() > 0) dX1.topRows(9 * E).array() *= c.M1.array();
        if (c.M2.size() > 0) dX2.topRows(6 * E).array() *= c.M2.array();

        // embedding scatter
        for (Index t = 0; t < T; ++t) {
            const Step& s = seq[static_cast<std::size_t>(t)];
            Index r = 0;
            for (std::size_t k = 0; k < 4; ++k) {
                if (k == 3) {
                    mm(g, L_.emb1_correct).col(s.correct) += dX1.col(t).segment(r, E);
                    r += E;
                }
                mm(g, L_.emb1[k]).col(s.ids[ix(kEmb1Inputs[k])]) += dX1.col(t).segment(r, E);
                r += E;
            }
            for (std::size_t k = 0; k < 4; ++k) {
                const auto b = cross_bucket(k, s.ids[ix(kCrossInputs[k])], s.correct, cfg.cross_buckets);
                mm(g, L_.cross).col(static_cast<Index>(b)) += dX1.col(t).segment(r, E);
                r += E;
            }
            r = 0;
            for (std::size_t k = 0; k < kEmb2Inputs.size(); ++k) {
                mm(g, L_.emb2[k]).col(s.ids[ix(kEmb2Inputs[k])]) += dX2.col(t).segment(r, E);
                r += E;
            }
        }
    }

private:
    const Net& net_;
    Layout L_;
    const double* p_;
};

std::vector<std::pair<std::size_t, std::size_t>> user_groups(const std::vector<FeatureRow>& rows) {
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    std::vector<char> seen;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto u = rows[i].user_index;
        if (i == 0 || u != rows[i - 1].user_index) {
            if (u >= seen.size()) seen.resize(u + 1, 0);
            if (seen[u]) throw std::invalid_argument("feature rows are not grouped by user");
            seen[u] = 1;
            groups.emplace_back(i, i);
        }
        groups.back().second = i + 1;
    }
    return groups;
}

int target_of(Label l) noexcept {
    return l == Label::mistake ? 1 : l == Label::correct ? 0 : -1;
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::invalid_argument("truncated network checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

constexpr char kMagic[8] = {'S', 'L', 'K', 'N', 'E', 'T', '\0', '\1'};

}  // namespace

void NetConfig::validate() const {
    if (embed_dim < 1 || recurrent_units < 1 || ff_units < 1)
        throw std::invalid_argument("rnn: embed_dim, recurrent_units and ff_units must be positive");
    if (subseq_len < 2) throw std::invalid_argument("rnn: subseq_len must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("rnn: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("rnn: epochs must be >= 1");
    if (!(learning_rate >= 0.0) || !(l2_coeff >= 0.0))
        throw std::invalid_argument("rnn: learning_rate and l2_coeff must be >= 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("rnn: dropout_p must be in [0,1)");
    if (!(dev_eval_fraction > 0.0 && dev_eval_fraction <= 1.0))
        throw std::invalid_argument("rnn: dev_eval_fraction must be in (0,1]");
    if (cross_buckets < 1) throw std::invalid_argument("rnn: cross_buckets must be >= 1");
}

NumericStats numeric_stats(const std::vector<FeatureRow>& train_rows) {
    double ds = 0.0, dss = 0.0, ts = 0.0, tss = 0.0;
    std::size_t dn = 0, tn = 0;
    for (const auto& r : train_rows) {
        ds += r.days;
        dss += r.days * r.days;
        ++dn;
        if (r.time) {
            ts += *r.time;
            tss += *r.time * *r.time;
            ++tn;
        }
    }
    NumericStats s;
    auto finish = [](double sum, double sq, std::size_t n, double& mean, double& sd, const char* what) {
        if (n == 0) {
            mean = 0.0;
            sd = 0.0;
        } else {
            mean = sum / static_cast<double>(n);
            sd = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
        }
        if (!(sd > 1e-12)) {
            sd = 0.0;
            warn(fmt::format("rnn: '{}' has zero variance in train; its normalized value is 0", what));
        }
    };
    finish(ds, dss, dn, s.days_mean, s.days_sd, "days");
    finish(ts, tss, tn, s.time_mean, s.time_sd, "time");
    return s;
}

std::array<double, 3> preprocess_numeric(std::optional<double> x, double mean, double sd) {
    if (!x || !(sd > 0.0)) return {0.0, 0.0, 0.0};
    const double z = std::clamp((*x - mean) / sd, -100.0, 100.0);
    const double sign = z < 0.0 ? -1.0 : 1.0;
    return {z, sign * std::sqrt(std::fabs(z)), sign * z * z};
}

Step make_step(const FeatureRow& r, const NumericStats& st, bool reveal_label) {
    Step s;
    s.ids[ix(Input::token)] = r.cat[static_cast<std::size_t>(Cat::token)];
    s.ids[ix(Input::pos)] = r.cat[static_cast<std::size_t>(Cat::pos)];
    s.ids[ix(Input::format)] = r.cat[static_cast<std::size_t>(Cat::format)];
    s.ids[ix(Input::exercise_key)] = r.cat[static_cast<std::size_t>(Cat::exercise_key)];
    s.ids[ix(Input::dep_label)] = r.cat[static_cast<std::size_t>(Cat::dep_label)];
    s.ids[ix(Input::dep_token)] = r.dep_token;
    s.ids[ix(Input::user)] = r.cat[static_cast<std::size_t>(Cat::user)];
    s.ids[ix(Input::client)] = r.cat[static_cast<std::size_t>(Cat::client)];
    s.ids[ix(Input::session)] = r.cat[static_cast<std::size_t>(Cat::session)];
    s.ids[ix(Input::countries)] = r.cat[static_cast<std::size_t>(Cat::countries)];
    s.target = target_of(r.label);
    s.correct = reveal_label && s.target >= 0 ? s.target : kUnknown;
    const auto d = preprocess_numeric(r.days, st.days_mean, st.days_sd);
    const auto t = preprocess_numeric(r.time, st.time_mean, st.time_sd);
    std::copy(d.begin(), d.end(), s.num.begin());
    std::copy(t.begin(), t.end(), s.num.begin() + 3);
    s.num[6] = r.time ? 0.0 : 1.0;
    return s;
}

Sequence make_window(std::span<const FeatureRow> rows, const NumericStats& stats) {
    Sequence seq;
    seq.reserve(rows.size());
    const std::size_t half = rows.size() / 2;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const bool masked = i >= half;
        Step s = make_step(rows[i], stats, !masked);
        s.mask = masked && s.target >= 0;
        if (!masked) s.target = -1;
        seq.push_back(s);
    }
    return seq;
}

std::vector<std::pair<std::size_t, std::size_t>> window_bounds(std::size_t n, std::size_t len, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (n == 0) return out;
    if (n <= len) {
        out.emplace_back(0, n);
        return out;
    }
    const auto o = static_cast<std::size_t>(rng.below(len));
    std::size_t b = 0;
    if (o > 0) {
        out.emplace_back(0, o);
        b = o;
    }
    while (b < n) {
        const std::size_t e = std::min(n, b + len);
        out.emplace_back(b, e);
        b = e;
    }
    return out;
}

TableSizes table_sizes(const Vocab& v) {
    TableSizes s{};
    s[ix(Input::token)] = v.size(Cat::token);
    s[ix(Input::pos)] = v.size(Cat::pos);
    s[ix(Input::format)] = v.size(Cat::format);
    s[ix(Input::exercise_key)] = v.size(Cat::exercise_key);
    s[ix(Input::dep_label)] = v.size(Cat::dep_label);
    s[ix(Input::dep_token)] = v.size(Cat::token);
    s[ix(Input::user)] = v.size(Cat::user);
    s[ix(Input::client)] = v.size(Cat::client);
    s[ix(Input::session)] = v.size(Cat::session);
    s[ix(Input::countries)] = v.size(Cat::countries);
    return s;
}

Net::Net(const NetConfig& cfg, const TableSizes& sizes) : cfg_(cfg), sizes_(sizes) {
    cfg_.validate();
    const auto E = static_cast<std::size_t>(cfg.embed_dim);
    const auto H = static_cast<std::size_t>(cfg.recurrent_units);
    const auto F = static_cast<std::size_t>(cfg.ff_units);
    const std::size_t D1 = 9 * E + kNumNumeric;
    const std::size_t D2 = 6 * E + kNumNumeric;
    std::size_t off = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
        tensors_.push_back(TensorSpec{std::move(name), rows, cols, off});
        off += rows * cols;
    };
    for (auto in : kEmb1Inputs) add(std::string("emb1.") + kInputNames[ix(in)], E, sizes[ix(in)]);
    add("emb1.correct", E, 3);
    add("cross", E, cfg.cross_buckets);
    for (auto in : kEmb2Inputs) add(std::string("emb2.") + kInputNames[ix(in)], E, sizes[ix(in)]);
    for (std::size_t k = 0; k < kNumInputs; ++k) add(std::string("scalar.") + kInputNames[k], sizes[k], 1);
    add("in.W", 2 * H, D1);
    add("in.b", 2 * H, 1);
    for (int l = 1; l <= 2; ++l)
        for (const char* d : {"fwd", "bwd"}) {
            add(fmt::format("lstm{}.{}.W", l, d), 4 * H, 2 * H);
            add(fmt::format("lstm{}.{}.U", l, d), 4 * H, H);
            add(fmt::format("lstm{}.{}.b", l, d), 4 * H, 1);
        }
    add("state.v", 2 * H, 1);
    add("state.P", 2 * H, D2);
    add("ff1.W", F, D2 + kNumScalars);
    add("ff1.b", F, 1);
    add("ff2.W", F, F);
    add("ff2.b", F, 1);
    add("ff3.w", F, 1);
    add("ff3.b", 1, 1);
    params_.assign(off, 0.0);
}

const TensorSpec& Net::tensor(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw std::out_of_range("no tensor named '" + name + "'");
}

void Net::init(std::uint64_t seed) {
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), 0.0);
    const auto H = static_cast<std::size_t>(cfg_.recurrent_units);
    for (const auto& t : tensors_) {
        double* p = params_.data() + t.offset;
        const std::size_t n = t.rows * t.cols;
        const bool emb = t.name.rfind("emb", 0) == 0 || t.name == "cross";
        const bool bias = t.cols == 1 || t.name.rfind("scalar.", 0) == 0;
        if (emb) {
            for (std::size_t i = 0; i < n; ++i) p[i] = rng.normal(0.0, 0.1);
        } else if (t.name.ends_with(".b") && t.name.rfind("lstm", 0) == 0) {
            for (std::size_t i = H; i < 2 * H; ++i) p[i] = 1.0;  // forget gate
        } else if (t.name == "ff3.w" || t.name == "state.v") {
            const double a = std::sqrt(6.0 / static_cast<double>(t.rows + 1));
            for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-a, a);
        } else if (!bias) {
            const double a = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
            const double scale = t.name == "state.P" ? 0.1 : 1.0;
            for (std::size_t i = 0; i < n; ++i) p[i] = scale * rng.uniform(-a, a);
        }
    }
}

std::vector<double> Net::forward(const Sequence& seq) const {
    if (seq.empty()) return {};
    Engine eng(*this);
    Cache c;
    eng.forward(seq, nullptr, c);
    std::vector<double> out(seq.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = 1.0 / (1.0 + std::exp(-c.logit(static_cast<Index>(t))));
    return out;
}

LossGrad Net::loss_and_grads(std::span<const Sequence> batch, Rng* dropout_rng) const {
    LossGrad lg;
    for (const auto& seq : batch)
        for (const auto& s : seq) lg.n_masked += s.mask;
    if (lg.n_masked == 0) throw std::invalid_argument("rnn: batch has no masked steps");
    lg.grad.assign(params_.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(lg.n_masked);
    Engine eng(*this);
    double sum = 0.0;
    for (const auto& seq : batch) {
        if (seq.empty()) continue;
        Cache c;
        eng.forward(seq, dropout_rng, c);
        VectorXd dlogit = VectorXd::Zero(c.T);
        bool any = false;
        for (Index t = 0; t < c.T; ++t) {
            const Step& s = seq[static_cast<std::size_t>(t)];
            if (!s.mask) continue;
            if (s.target != 0 && s.target != 1) throw std::invalid_argument("rnn: masked step without a target");
            const double z = c.logit(t);
            sum += softplus(s.target == 1 ? -z : z);
            const double p = 1.0 / (1.0 + std::exp(-z));
            dlogit(t) = (p - s.target) * inv;
            any = true;
        }
        if (any) eng.backward(seq, c, dlogit, lg.grad.data());
    }
    double sq = 0.0;
    for (double v : params_) sq += v * v;
    lg.loss = sum * inv + 0.5 * cfg_.l2_coeff * sq;
    if (cfg_.l2_coeff != 0.0)
        for (std::size_t i = 0; i < params_.size(); ++i) lg.grad[i] += cfg_.l2_coeff * params_[i];
    return lg;
}

PredictionSet predict_net(const Model& m, const std::vector<FeatureRow>& rows, Partition target,
                          std::span<const std::size_t> users) {
    const auto groups = user_groups(rows);
    PredictionSet out;
    for (auto u : users) {
        if (u >= groups.size()) throw std::out_of_range("predict_net: user index out of range");
        const auto [b, e] = groups[u];
        Sequence seq;
        std::vector<std::pair<std::size_t, const FeatureRow*>> scored;
        for (std::size_t i = b; i < e; ++i) {
            const auto& r = rows[i];
            if (r.partition > target) continue;
            const bool is_target = r.partition == target;
            if (is_target) scored.emplace_back(seq.size(), &r);
            seq.push_back(make_step(r, m.stats, !is_target));
        }
        if (scored.empty()) continue;
        const auto probs = m.net.forward(seq);
        for (const auto& [pos, r] : scored) out.add(r->instance_id, probs[pos]);
    }
    return out;
}

PredictionSet predict_net(const Model& m, const std::vector<FeatureRow>& rows, Partition target) {
    const auto n = user_groups(rows).size();
    std::vector<std::size_t> users(n);
    for (std::size_t i = 0; i < n; ++i) users[i] = i;
    return predict_net(m, rows, target, users);
}

TrainNetResult train_net(const std::vector<FeatureRow>& rows, const Vocab& v, const NetConfig& cfg) {
    cfg.validate();
    const auto groups = user_groups(rows);
    std::vector<std::vector<FeatureRow>> train_rows(groups.size());
    std::vector<FeatureRow> all_train;
    for (std::size_t u = 0; u < groups.size(); ++u)
        for (std::size_t i = groups[u].first; i < groups[u].second; ++i)
            if (rows[i].partition == Partition::train) {
                train_rows[u].push_back(rows[i]);
                all_train.push_back(rows[i]);
            }
    if (all_train.empty()) throw ValidationError("rnn: no train rows");

    TrainNetResult res;
    Model& model = res.model;
    model.config = cfg;
    model.stats = numeric_stats(all_train);
    model.vocab_hash = v.hash();
    model.net = Net(cfg, table_sizes(v));
    model.net.init(derive_seed(cfg.seed, "rnn.init"));
    fmt::print(stderr, "rnn: {} parameters\n", model.net.num_params());

    // fixed user-level dev slice
    std::vector<std::size_t> dev_users;
    for (std::size_t u = 0; u < groups.size(); ++u)
        for (std::size_t i = groups[u].first; i < groups[u].second; ++i)
            if (rows[i].partition == Partition::dev && rows[i].label != Label::unknown) {
                dev_users.push_back(u);
                break;
            }
    {
        Rng rng(derive_seed(cfg.seed, "rnn.dev_subset"));
        rng.shuffle(dev_users.begin(), dev_users.end());
        const auto keep = static_cast<std::size_t>(
            std::ceil(cfg.dev_eval_fraction * static_cast<double>(dev_users.size()) - 1e-9));
        dev_users.resize(std::min(dev_users.size(), std::max<std::size_t>(keep, dev_users.empty() ? 0 : 1)));
        std::sort(dev_users.begin(), dev_users.end());
    }
    std::unordered_map<std::string, int> dev_labels;
    for (const auto& r : rows)
        if (r.partition == Partition::dev && r.label != Label::unknown) dev_labels[r.instance_id] = target_of(r.label);

    auto& theta = model.net.params();
    std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0);
    std::vector<double> best = theta;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::uint64_t step = 0;
    const auto len = static_cast<std::size_t>(cfg.subseq_len);

    for (int epoch = 1; epoch <= cfg.epochs && !res.diverged; ++epoch) {
        const auto e = static_cast<std::uint64_t>(epoch);
        Rng wrng(derive_seed(derive_seed(cfg.seed, "rnn.windows"), e));
        std::vector<Sequence> windows;
        for (std::size_t u = 0; u < train_rows.size(); ++u) {
            const auto& tr = train_rows[u];
            for (const auto& [wb, we] : window_bounds(tr.size(), len, wrng)) {
                auto w = make_window(std::span<const FeatureRow>(tr).subspan(wb, we - wb), model.stats);
                if (std::any_of(w.begin(), w.end(), [](const Step& s) { return s.mask; }))
                    windows.push_back(std::move(w));
            }
        }
        Rng srng(derive_seed(derive_seed(cfg.seed, "rnn.shuffle"), e));
        srng.shuffle(windows.begin(), windows.end());
        Rng drng(derive_seed(derive_seed(cfg.seed, "rnn.dropout"), e));

        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        const auto bs = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t b = 0; b < windows.size(); b += bs) {
            const std::span<const Sequence> batch(windows.data() + b, std::min(bs, windows.size() - b));
            LossGrad lg;
            try {
                lg = model.net.loss_and_grads(batch, cfg.dropout_p > 0.0 ? &drng : nullptr);
            } catch (const std::runtime_error& err) {
                res.diverged = true;
                res.message = err.what();
                break;
            }
            const bool finite = std::isfinite(lg.loss) &&
                                std::all_of(lg.grad.begin(), lg.grad.end(), [](double g) { return std::isfinite(g); });
            if (!finite) {
                res.diverged = true;
                res.message = fmt::format("training loss became non-finite in epoch {}", epoch);
                break;
            }
            loss_sum += lg.loss * static_cast<double>(lg.n_masked);
            loss_n += lg.n_masked;
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g = lg.grad[i];
                m1[i] = b1 * m1[i] + (1.0 - b1) * g;
                m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
                theta[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
            }
        }
        if (res.diverged) break;

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
        if (!dev_users.empty()) {
            const auto preds = predict_net(model, rows, Partition::dev, dev_users);
            std::vector<int> y;
            std::vector<double> s;
            for (const auto& [id, p] : preds.entries()) {
                auto it = dev_labels.find(id);
                if (it == dev_labels.end()) continue;
                y.push_back(it->second);
                s.push_back(p);
            }
            try {
                log.dev_auc = auc(y, s);
            } catch (const UndefinedMetric&) {
            }
        }
        fmt::print(stderr, "rnn: epoch {} loss {:.5f} dev_auc {}\n", epoch, log.train_loss,
                   log.dev_auc ? fmt::format("{:.5f}", *log.dev_auc) : std::string("n/a"));
        if (log.dev_auc ? (!res.best_auc || *log.dev_auc > *res.best_auc) : !res.best_auc) {
            if (log.dev_auc) res.best_auc = log.dev_auc;
            res.best_epoch = epoch;
            best = theta;
        }
        res.log.push_back(log);
    }
    if (res.diverged) {
        warn("rnn: " + res.message + "; keeping the last finite parameters");
        res.best_epoch = static_cast<int>(res.log.size());
    } else {
        theta = best;
    }
    return res;
}

void save_model(const Model& m, std::ostream& out) {
    static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes little-endian doubles");
    using nlohmann::ordered_json;
    const auto& c = m.config;
    ordered_json h;
    h["version"] = 1;
    h["kind"] = "slamkit.seqnet";
    h["config"] = {{"embed_dim", c.embed_dim},
                   {"recurrent_units", c.recurrent_units},
                   {"ff_units", c.ff_units},
                   {"subseq_len", c.subseq_len},
                   {"batch_size", c.batch_size},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"dropout_p", c.dropout_p},
                   {"l2_coeff", c.l2_coeff},
                   {"dev_eval_fraction", c.dev_eval_fraction},
                   {"cross_buckets", c.cross_buckets},
                   {"bidirectional", c.bidirectional},
                   {"seed", c.seed}};
    h["stats"] = {{"days_mean", m.stats.days_mean},
                  {"days_sd", m.stats.days_sd},
                  {"time_mean", m.stats.time_mean},
                  {"time_sd", m.stats.time_sd}};
    h["vocab_hash"] = fmt::format("{:016x}", m.vocab_hash);
    h["table_sizes"] = m.net.sizes();
    auto& ts = h["tensors"] = ordered_json::array();
    for (const auto& t : m.net.tensors()) ts.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
    const std::string header = h.dump();
    out.write(kMagic, sizeof kMagic);
    write_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto& p = m.net.params();
    write_u64(out, p.size());
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
}

Model load_model(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::invalid_argument("not a network checkpoint");
    const auto hlen = read_u64(in);
    std::string header(hlen, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(hlen)))
        throw std::invalid_argument("truncated network checkpoint");
    const auto h = nlohmann::json::parse(header);
    if (h.value("version", 0) != 1) throw std::invalid_argument("unsupported network checkpoint version");
    Model m;
    const auto& c = h.at("config");
    m.config.embed_dim = c.at("embed_dim");
    m.config.recurrent_units = c.at("recurrent_units");
    m.config.ff_units = c.at("ff_units");
    m.config.subseq_len = c.at("subseq_len");
    m.config.batch_size = c.at("batch_size");
    m.config.epochs = c.at("epochs");
    m.config.learning_rate = c.at("learning_rate");
    m.config.dropout_p = c.at("dropout_p");
    m.config.l2_coeff = c.at("l2_coeff");
    m.config.dev_eval_fraction = c.at("dev_eval_fraction");
    m.config.cross_buckets = c.at("cross_buckets");
    m.config.bidirectional = c.at("bidirectional");
    m.config.seed = c.at("seed");
    const auto& s = h.at("stats");
    m.stats = {s.at("days_mean"), s.at("days_sd"), s.at("time_mean"), s.at("time_sd")};
    m.vocab_hash = std::stoull(h.at("vocab_hash").get<std::string>(), nullptr, 16);
    const auto sizes = h.at("table_sizes").get<TableSizes>();
    m.net = Net(m.config, sizes);
    const auto& tj = h.at("tensors");
    const auto& tensors = m.net.tensors();
    if (tj.size() != tensors.size()) throw std::invalid_argument("checkpoint tensor list does not match the network");
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tj[i].at("name") != tensors[i].name || tj[i].at("rows") != tensors[i].rows ||
            tj[i].at("cols") != tensors[i].cols)
            throw std::invalid_argument("checkpoint tensor '" + tensors[i].name + "' has the wrong shape");
    const auto n = read_u64(in);
    auto& p = m.net.params();
    if (n != p.size()) throw std::invalid_argument("checkpoint parameter count does not match the network");
    if (!in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw std::invalid_argument("truncated network checkpoint");
    return m;
}

}  // namespace slamkit::seqnet
