#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/params.hpp"
#include "demspec/rng.hpp"
#include "demspec/tokenizer.hpp"

namespace demspec {

struct EncoderConfig {
    int vocab_size = 8000;
    int hidden_dim = 128;
    int num_layers = 4;
    int num_heads = 4;
    int feedforward_dim = 256;
    int max_seq_len = 128;
    double dropout = 0.1;
    bool has_sequence_token = true;

    void validate() const;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Probability clamp applied before every log.
inline constexpr double kProbabilityEpsilon = 1e-7;

enum class Mode { train, eval };

// Pre-LayerNorm transformer encoder with learned positions plus three heads:
// masked-token prediction, sequence-level and token-level demographic logits.
// An optional k-way classifier head is attached for fine-tuning.
class Model {
public:
    Model() = default;
    Model(const EncoderConfig& config, std::uint64_t seed);
    // Rebuilds index tables over an existing parameter set (checkpoint load).
    Model(const EncoderConfig& config, ParamSet params);

    const EncoderConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    void add_classifier(int num_classes);
    void drop_classifier();
    bool has_classifier() const { return classifier_.has_value(); }
    int classifier_classes() const;

    struct LayerIndex {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln1_g, ln1_b, ln2_g, ln2_b;
        std::size_t w1, b1, w2, b2;
    };
    struct HeadIndex {
        std::size_t w, b;
    };

    std::size_t token_embedding() const { return token_embedding_; }
    std::size_t position_embedding() const { return position_embedding_; }
    const std::vector<LayerIndex>& layers() const { return layers_; }
    std::size_t final_ln_gamma() const { return final_g_; }
    std::size_t final_ln_beta() const { return final_b_; }
    HeadIndex mlm_head() const { return mlm_; }
    HeadIndex dem_seq_head() const { return dem_seq_; }
    HeadIndex dem_tok_head() const { return dem_tok_; }
    HeadIndex classifier_head() const;

private:
    void build_index();

    EncoderConfig config_;
    ParamSet params_;
    std::size_t token_embedding_ = 0, position_embedding_ = 0, final_g_ = 0, final_b_ = 0;
    std::vector<LayerIndex> layers_;
    HeadIndex mlm_{}, dem_seq_{}, dem_tok_{};
    std::optional<HeadIndex> classifier_;
};

// Encoder output. Rows of all sequences are packed: sequence r occupies
// token_states rows [offsets[r], offsets[r] + lengths[r]). Padding positions
// are not materialised; token_state(r) returns the (width x hidden) view with
// zero rows for padding.
struct EncodedBatch {
    Matrix token_states;
    Matrix sequence_state;  // rows x hidden, from the start-of-sequence position
    std::vector<int> offsets;
    std::vector<int> lengths;
    int width = 0;

    int rows() const { return static_cast<int>(lengths.size()); }
    int hidden() const { return static_cast<int>(token_states.cols()); }
    Matrix token_state(int row) const;
    bool all_finite() const { return token_states.allFinite() && sequence_state.allFinite(); }
};

struct ForwardTrace;

// Intermediate activations recorded for backpropagation.
class Trace {
public:
    Trace();
    ~Trace();
    Trace(Trace&&) noexcept;
    Trace& operator=(Trace&&) noexcept;
    ForwardTrace& get() { return *impl_; }
    const ForwardTrace& get() const { return *impl_; }

private:
    std::unique_ptr<ForwardTrace> impl_;
};

// Forward pass. In train mode dropout draws from `dropout_rng` (may be null
// when dropout is zero); in eval mode the pass is deterministic.
EncodedBatch encode(const Model& model, const MaskedBatch& batch, Mode mode = Mode::eval,
                    Rng* dropout_rng = nullptr, Trace* trace = nullptr);

// Backpropagates d(loss)/d(token_states) (packed like EncodedBatch) into
// parameter gradients, accumulating into `grads`.
void encode_backward(const Model& model, const Trace& trace, const Matrix& d_states,
                     ParamSet& grads);

// Gradient sink for the loss functions: d(scale * loss)/d(token_states) and
// d(scale * loss)/d(head params) are accumulated when provided.
struct LossGrad {
    Matrix* d_states = nullptr;
    ParamSet* grads = nullptr;
    double scale = 1.0;
};

double mlm_loss(const Model& model, const EncodedBatch& encoded, const MaskedBatch& batch,
                const LossGrad& grad = {});
double dem_loss_seq(const Model& model, const EncodedBatch& encoded,
                    std::span<const std::optional<DemClass>> labels, const LossGrad& grad = {});
double dem_loss_tok(const Model& model, const EncodedBatch& encoded, const MaskedBatch& batch,
                    std::span<const std::optional<DemClass>> labels, const LossGrad& grad = {});

// Mean softmax cross-entropy of the classifier head over sequence_state.
double classification_loss(const Model& model, const EncodedBatch& encoded,
                            std::span<const int> labels, const LossGrad& grad = {});
Matrix classifier_logits(const Model& model, const EncodedBatch& encoded);

// Scalar building blocks, exposed for oracle tests.
double sigmoid(double z);
double binary_cross_entropy(double probability, int label);
double clamp_probability(double p);

}  // namespace demspec
