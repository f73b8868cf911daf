#include "taskadapt/transfer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "taskadapt/errors.hpp"
#include "taskadapt/nn.hpp"

namespace taskadapt {

namespace {

// Parameter layout (875 total).
constexpr int kEmb = 0;                    // 10 embedding scalars
constexpr int kW1 = 10;                    // 24 x 9
constexpr int kB1 = kW1 + 24 * 9;          // 24
constexpr int kW2 = kB1 + 24;              // 24 x 24
constexpr int kB2 = kW2 + 24 * 24;         // 24
constexpr int kW3 = kB2 + 24;              // 1 x 24
constexpr int kB3 = kW3 + 24;              // 1
constexpr int kNumParams = kB3 + 1;

constexpr int kInputTokens = 9;
constexpr int kHidden = 24;

std::array<int, kInputTokens> triple_tokens(const Instruction& z_x, const Instruction& z_i,
                                            const Instruction& z_j) {
    std::array<int, kInputTokens> tokens;
    const std::array<int, 3> tx = tokenize(z_x);
    const std::array<int, 3> ti = tokenize(z_i);
    const std::array<int, 3> tj = tokenize(z_j);
    std::copy(tx.begin(), tx.end(), tokens.begin());
    std::copy(ti.begin(), ti.end(), tokens.begin() + 3);
    std::copy(tj.begin(), tj.end(), tokens.begin() + 6);
    return tokens;
}

struct ForwardTrace {
    std::array<double, kInputTokens> embedded;  // after dropout scaling
    std::array<double, kHidden> h1;
    std::array<double, kHidden> h2;
    double probability;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TransferModel::TransferModel() : params_(kNumParams, 0.0) {}

void TransferModel::init_uniform(Rng& rng) {
    for (int i = 0; i < 10; ++i) params_[kEmb + i] = rng.symmetric(0.1);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(kInputTokens));
    for (int i = kW1; i < kW2; ++i) params_[static_cast<std::size_t>(i)] = rng.symmetric(b1);
    const double b2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
    for (int i = kW2; i < kNumParams; ++i) params_[static_cast<std::size_t>(i)] = rng.symmetric(b2);
}

namespace {

ForwardTrace run_forward(const std::vector<double>& p, const std::array<int, kInputTokens>& tokens,
                         const double* dropout_scale) {
    ForwardTrace t;
    for (int k = 0; k < kInputTokens; ++k) {
        double e = p[static_cast<std::size_t>(kEmb + tokens[static_cast<std::size_t>(k)])];
        if (dropout_scale) e *= dropout_scale[k];
        t.embedded[static_cast<std::size_t>(k)] = e;
    }
    for (int o = 0; o < kHidden; ++o) {
        double acc = p[static_cast<std::size_t>(kB1 + o)];
        for (int i = 0; i < kInputTokens; ++i)
            acc += p[static_cast<std::size_t>(kW1 + o * kInputTokens + i)] * t.embedded[static_cast<std::size_t>(i)];
        t.h1[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
    }
    for (int o = 0; o < kHidden; ++o) {
        double acc = p[static_cast<std::size_t>(kB2 + o)];
        for (int i = 0; i < kHidden; ++i)
            acc += p[static_cast<std::size_t>(kW2 + o * kHidden + i)] * t.h1[static_cast<std::size_t>(i)];
        t.h2[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
    }
    double logit = p[kB3];
    for (int i = 0; i < kHidden; ++i)
        logit += p[static_cast<std::size_t>(kW3 + i)] * t.h2[static_cast<std::size_t>(i)];
    t.probability = sigmoid(logit);
    return t;
}

// Backpropagates dLoss/dLogit through the trace, accumulating into grad.
void run_backward(const std::vector<double>& p, const std::array<int, kInputTokens>& tokens,
                  const double* dropout_scale, const ForwardTrace& t, double dlogit,
                  std::vector<double>& grad) {
    std::array<double, kHidden> dh2;
    grad[kB3] += dlogit;
    for (int i = 0; i < kHidden; ++i) {
        grad[static_cast<std::size_t>(kW3 + i)] += dlogit * t.h2[static_cast<std::size_t>(i)];
        dh2[static_cast<std::size_t>(i)] =
            t.h2[static_cast<std::size_t>(i)] > 0.0 ? dlogit * p[static_cast<std::size_t>(kW3 + i)] : 0.0;
    }
    std::array<double, kHidden> dh1{};
    for (int o = 0; o < kHidden; ++o) {
        const double d = dh2[static_cast<std::size_t>(o)];
        if (d == 0.0) continue;
        grad[static_cast<std::size_t>(kB2 + o)] += d;
        for (int i = 0; i < kHidden; ++i) {
            grad[static_cast<std::size_t>(kW2 + o * kHidden + i)] += d * t.h1[static_cast<std::size_t>(i)];
            dh1[static_cast<std::size_t>(i)] += d * p[static_cast<std::size_t>(kW2 + o * kHidden + i)];
        }
    }
    std::array<double, kInputTokens> de{};
    for (int o = 0; o < kHidden; ++o) {
        const double d = t.h1[static_cast<std::size_t>(o)] > 0.0 ? dh1[static_cast<std::size_t>(o)] : 0.0;
        if (d == 0.0) continue;
        grad[static_cast<std::size_t>(kB1 + o)] += d;
        for (int i = 0; i < kInputTokens; ++i) {
            grad[static_cast<std::size_t>(kW1 + o * kInputTokens + i)] += d * t.embedded[static_cast<std::size_t>(i)];
            de[static_cast<std::size_t>(i)] += d * p[static_cast<std::size_t>(kW1 + o * kInputTokens + i)];
        }
    }
    for (int k = 0; k < kInputTokens; ++k) {
        double g = de[static_cast<std::size_t>(k)];
        if (dropout_scale) g *= dropout_scale[k];
        grad[static_cast<std::size_t>(kEmb + tokens[static_cast<std::size_t>(k)])] += g;
    }
}

double bce(double probability, int label) {
    const double p = std::clamp(probability, 1e-12, 1.0 - 1e-12);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

double TransferModel::forward(const Instruction& z_x, const Instruction& z_i,
                              const Instruction& z_j) const {
    return run_forward(params_, triple_tokens(z_x, z_i, z_j), nullptr).probability;
}

double TransferModel::batch_gradient(const std::vector<ComparisonRecord>& batch, bool train_mode,
                                     Rng* rng, std::vector<double>& grad) const {
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const ComparisonRecord& r : batch) {
        const auto tokens = triple_tokens(r.z_x, r.z_i, r.z_j);
        double dropout_scale[kInputTokens];
        const double* scale = nullptr;
        if (train_mode) {
            // Inverted dropout on the embedded features.
            for (int k = 0; k < kInputTokens; ++k)
                dropout_scale[k] = rng->uniform01() < kDropoutRate ? 0.0 : 1.0 / (1.0 - kDropoutRate);
            scale = dropout_scale;
        }
        const ForwardTrace t = run_forward(params_, tokens, scale);
        loss += bce(t.probability, r.label) * inv_n;
        run_backward(params_, tokens, scale, t, (t.probability - r.label) * inv_n, grad);
    }
    return loss;
}

double TransferModel::batch_loss(const std::vector<ComparisonRecord>& batch) const {
    double loss = 0.0;
    for (const ComparisonRecord& r : batch) loss += bce(forward(r.z_x, r.z_i, r.z_j), r.label);
    return loss / static_cast<double>(batch.size());
}

void ClassifierConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("classifier learning_rate must be > 0");
    if (max_steps < 0) throw ConfigError("classifier max_steps must be >= 0");
    if (batch_size < 1) throw ConfigError("classifier batch_size must be >= 1");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw ConfigError("validation_fraction must be in [0, 1)");
}

ClassifierResult train_classifier(const std::vector<ComparisonRecord>& records,
                                  const ClassifierConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw DegenerateDataset("empty comparison dataset");
    const bool has_pos = std::any_of(records.begin(), records.end(),
                                     [](const ComparisonRecord& r) { return r.label == 1; });
    const bool has_neg = std::any_of(records.begin(), records.end(),
                                     [](const ComparisonRecord& r) { return r.label == 0; });
    if (!has_pos || !has_neg)
        throw DegenerateDataset("comparison dataset contains a single class");

    Rng rng(derive_seed(cfg.seed, "classifier"));

    // Carve off a validation slice for early stopping.
    std::vector<ComparisonRecord> shuffled = records;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.bounded(i)]);
    std::size_t n_val = static_cast<std::size_t>(cfg.validation_fraction *
                                                 static_cast<double>(shuffled.size()));
    if (n_val >= shuffled.size()) n_val = shuffled.size() - 1;
    const std::vector<ComparisonRecord> validation(shuffled.begin(),
                                                   shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
    const std::vector<ComparisonRecord> training(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val),
                                                 shuffled.end());

    ClassifierResult result;
    result.model.init_uniform(rng);
    Adam adam(result.model.params().size(), cfg.learning_rate, 1e-8);

    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_params = result.model.params();
    int stale_evals = 0;

    for (long step = 0; step < cfg.max_steps; ++step) {
        std::vector<ComparisonRecord> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i)
            batch.push_back(training[rng.bounded(training.size())]);

        std::vector<double> grad(result.model.params().size(), 0.0);
        const double loss = result.model.batch_gradient(batch, true, &rng, grad);
        if (!std::isfinite(loss)) throw NonFiniteLoss("classifier training loss is not finite");
        adam.step(result.model.params(), grad);
        result.loss_curve.push_back(loss);
        result.steps_used = step + 1;

        if (!validation.empty() && cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
            const double val_loss = result.model.batch_loss(validation);
            if (val_loss < best_val_loss - 1e-6) {
                best_val_loss = val_loss;
                best_params = result.model.params();
                stale_evals = 0;
            } else if (++stale_evals >= cfg.patience) {
                break;
            }
        }
    }
    if (!validation.empty() && std::isfinite(best_val_loss)) result.model.params() = best_params;
    return result;
}

double accuracy(const TransferModel& model, const std::vector<ComparisonRecord>& records) {
    if (records.empty()) throw Error("accuracy requires at least one record");
    int correct = 0;
    for (const ComparisonRecord& r : records) {
        const int predicted = model.forward(r.z_x, r.z_i, r.z_j) >= 0.5 ? 1 : 0;
        if (predicted == r.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

std::vector<RankedBase> select_best(const TransferModel& model, const Instruction& z_x,
                                    const std::vector<Instruction>& base_labels) {
    if (base_labels.empty()) throw Error("select_best requires at least one base label");
    // Score against opponents in canonical order so floating-point sums (and
    // therefore tie-breaks) cannot depend on the caller's label order.
    std::vector<Instruction> labels = base_labels;
    std::sort(labels.begin(), labels.end());
    std::vector<RankedBase> ranked;
    for (const Instruction& base : labels) {
        RankedBase rb{base, 0, 0.0};
        int opponents = 0;
        for (const Instruction& other : labels) {
            if (other == base) continue;
            const double p = model.forward(z_x, base, other);
            if (p >= 0.5) ++rb.wins;
            rb.mean_win_probability += p;
            ++opponents;
        }
        if (opponents > 0) rb.mean_win_probability /= opponents;
        ranked.push_back(rb);
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedBase& a, const RankedBase& b) {
        if (a.wins != b.wins) return a.wins > b.wins;
        if (a.mean_win_probability != b.mean_win_probability)
            return a.mean_win_probability > b.mean_win_probability;
        return a.instruction < b.instruction;
    });
    return ranked;
}

// --- model container ---------------------------------------------------------

namespace {

constexpr char kModelMagic[] = "TASKADAPT-MODEL v1\n";

std::uint64_t token_table_hash() {
    SeedChain chain;
    for (const auto& [word, id] : TokenTable::entries()) {
        chain.mix(word);
        chain.mix(static_cast<std::uint64_t>(id));
    }
    return chain.value();
}

}  // namespace

void save_model(const TransferModel& model, const std::string& path) {
    nlohmann::ordered_json header;
    header["token_table_hash"] = token_table_hash();
    header["n_params"] = model.params().size();

    std::string payload;
    payload.reserve(model.params().size() * 8);
    for (double v : model.params()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }

    SeedChain checksum;
    checksum.mix(payload);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open model file for writing: " + path);
    const std::string header_text = header.dump();
    out << kModelMagic;
    std::uint64_t len = header_text.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xFF));
    out << header_text << payload;
    const std::uint64_t h = checksum.value();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((h >> (8 * i)) & 0xFF));
    if (!out) throw Error("failed writing model file: " + path);
}

TransferModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open model file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string data = buf.str();

    const std::size_t magic_len = sizeof(kModelMagic) - 1;
    if (data.size() < magic_len + 16) throw CorruptSnapshot("model file truncated: " + path);
    if (data.compare(0, magic_len, kModelMagic) != 0) {
        if (data.compare(0, 15, "TASKADAPT-MODEL") == 0)
            throw VersionMismatch("unsupported model version in " + path);
        throw CorruptSnapshot("not a model file: " + path);
    }

    auto read_u64 = [&](std::size_t off) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[off + i])) << (8 * i);
        return v;
    };

    std::size_t off = magic_len;
    const std::uint64_t header_len = read_u64(off);
    off += 8;
    if (off + header_len + 8 > data.size()) throw CorruptSnapshot("model header truncated: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(off, header_len));
    } catch (const nlohmann::json::exception&) {
        throw CorruptSnapshot("unreadable model header: " + path);
    }
    off += header_len;

    if (header.value("token_table_hash", std::uint64_t{0}) != token_table_hash())
        throw VersionMismatch("model was built against a different token table: " + path);

    const std::size_t n = header.at("n_params").get<std::size_t>();
    if (off + n * 8 + 8 != data.size()) throw CorruptSnapshot("model payload size mismatch: " + path);

    SeedChain checksum;
    checksum.mix(data.substr(off, n * 8));
    if (checksum.value() != read_u64(off + n * 8))
        throw CorruptSnapshot("model payload checksum mismatch: " + path);

    TransferModel model;
    if (model.params().size() != n) throw VersionMismatch("unexpected model parameter count");
    for (std::size_t i = 0; i < n; ++i, off += 8) {
        const std::uint64_t bits = read_u64(off);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        model.params()[i] = v;
    }
    return model;
}

// --- synthetic oracle ----------------------------------------------------------

std::vector<ComparisonRecord> synthetic_verb_dataset(int n_records, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-verb"));
    const std::vector<Instruction> all = enumerate_all();
    std::vector<ComparisonRecord> records;
    while (static_cast<int>(records.size()) < n_records) {
        const Instruction z_x = all[rng.bounded(all.size())];
        const Instruction z_i = all[rng.bounded(all.size())];
        const Instruction z_j = all[rng.bounded(all.size())];
        if (z_i == z_j) continue;
        const bool i_match = z_i.verb == z_x.verb;
        const bool j_match = z_j.verb == z_x.verb;
        if (i_match == j_match) continue;  // no verb-match difference, no label
        records.push_back({z_x, z_i, z_j, i_match ? 1 : 0});
    }
    return records;
}

std::vector<ComparisonRecord> shuffle_labels(std::vector<ComparisonRecord> records,
                                             std::uint64_t seed) {
    Rng rng(derive_seed(seed, "label-shuffle"));
    for (std::size_t i = records.size(); i > 1; --i) {
        const std::size_t j = rng.bounded(i);
        std::swap(records[i - 1].label, records[j].label);
    }
    return records;
}

}  // namespace taskadapt
