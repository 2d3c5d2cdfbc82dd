#include "starsr/losses.hpp"

namespace starsr {

namespace {

nn::Tensor<double> tensor_from(const ImageTensor& img) {
  return nn::from_image<double>(img);
}

nn::Tensor<double> tensor_from(const std::vector<double>& v) {
  nn::Tensor<double> t({static_cast<int>(v.size()), 1, 1});
  t.v = v;
  return t;
}

template <class T>
void check_finite_part(double v, const char* name) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite loss term '") + name + "'");
}

}  // namespace

double l1_loss(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "l1_loss");
  nn::Tape<double> tape;
  auto ia = tape.leaf(tensor_from(a));
  auto ib = tape.leaf(tensor_from(b));
  return tape.val(nnops::mean_abs_diff(tape, ia, ib)).v[0];
}

double tv_loss(const ImageTensor& img) {
  nn::Tape<double> tape;
  auto i = tape.leaf(tensor_from(img));
  return tape.val(nnops::tv_loss(tape, i)).v[0];
}

double cycle_loss(const ImageTensor& source, const ImageTensor& reconstructed) {
  require_same_shape(source, reconstructed, "cycle_loss");
  return l1_loss(source, reconstructed);
}

double adversarial_g_value(const std::vector<double>& fake_scores) {
  nn::Tape<double> tape;
  auto f = tape.leaf(tensor_from(fake_scores));
  return tape.val(nnops::adversarial_g(tape, f)).v[0];
}

double adversarial_d_value(const std::vector<double>& real_scores,
                           const std::vector<double>& fake_scores) {
  nn::Tape<double> tape;
  auto r = tape.leaf(tensor_from(real_scores));
  auto f = tape.leaf(tensor_from(fake_scores));
  return tape.val(nnops::adversarial_d(tape, r, f)).v[0];
}

double cls_loss_value(const std::vector<double>& logits,
                      const DomainLabel& label) {
  nn::Tape<double> tape;
  auto l = tape.leaf(tensor_from(logits));
  return tape.val(nnops::cls_loss(tape, l, label)).v[0];
}

double total_g(const GenLossParts& parts, const LossWeights& w) {
  check_finite_part<double>(parts.per, "per");
  check_finite_part<double>(parts.gan, "gan");
  check_finite_part<double>(parts.tv, "tv");
  check_finite_part<double>(parts.cls_f, "cls_f");
  check_finite_part<double>(parts.l1, "l1");
  check_finite_part<double>(parts.cyc, "cyc");
  return w.per * parts.per + w.gan * parts.gan + w.tv * parts.tv +
         w.cls * parts.cls_f + w.l1 * parts.l1 + w.cyc * parts.cyc;
}

double total_d(const DiscLossParts& parts, const LossWeights& w) {
  check_finite_part<double>(parts.gan, "gan_d");
  check_finite_part<double>(parts.cls_r, "cls_r");
  return w.gan_d * parts.gan + w.cls_r * parts.cls_r;
}

}  // namespace starsr
