#include "emosde/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emosde {

SoftLabel SoftLabel::intensity(const EmotionLabel& emotion, double alpha, int num_emotions) {
    if (!(alpha >= 0.0) || !(alpha <= 1.0))
        throw std::domain_error("intensity label: alpha outside [0, 1]");
    if (emotion.id < 0 || emotion.id >= num_emotions)
        throw std::domain_error("intensity label: emotion id out of range");
    SoftLabel d;
    d.weights.assign(static_cast<size_t>(num_emotions), 0.0);
    d.weights[static_cast<size_t>(emotion.id)] += alpha;
    d.weights[0] += 1.0 - alpha;
    d.validate();
    return d;
}

SoftLabel SoftLabel::mixture(const std::vector<double>& raw) {
    if (raw.empty()) throw std::domain_error("mixture label: empty weight vector");
    double total = 0.0;
    for (double w : raw) {
        if (w < 0.0) throw std::domain_error("mixture label: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::domain_error("mixture label: all-zero weight vector");
    SoftLabel d;
    d.weights.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) d.weights[i] = raw[i] / total;
    d.validate();
    return d;
}

void SoftLabel::validate() const {
    if (weights.empty()) throw std::domain_error("soft label: empty");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !(w <= 1.0)) throw std::domain_error("soft label: weight outside [0, 1]");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::domain_error("soft label: weights must sum to 1");
}

int SoftLabel::argmax() const {
    return static_cast<int>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

bool SoftLabel::is_one_hot() const {
    for (double w : weights)
        if (w == 1.0) return true;
    return false;
}

}  // namespace emosde
