#include "mcae/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace mcae::diffcore {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::worst() const {
  if (entries.empty()) return "no coordinates checked";
  auto it = std::max_element(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return (a.skipped ? -1.0 : a.rel_error) < (b.skipped ? -1.0 : b.rel_error);
  });
  std::ostringstream os;
  os << it->array << "[" << it->index << "] analytic=" << it->analytic << " numeric=" << it->numeric
     << " rel=" << it->rel_error;
  return os.str();
}

GradCheckReport gradcheck_params(const LossBuilder& build, std::span<Parameter<double>* const> params,
                                 const GradCheckOptions& opt) {
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    tape.backward(loss);
  }
  struct Eval {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&]() {
    Tape<double> tape;
    tape.track_branches(opt.skip_kinks);
    const double v = build(tape).value().item();
    return Eval{v, tape.branch_signature()};
  };

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (Parameter<double>* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_array > 0 && coords.size() > opt.max_coords_per_array) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_array);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + opt.step;
      const Eval up = evaluate();
      p->value.data[i] = saved - opt.step;
      const Eval down = evaluate();
      p->value.data[i] = saved;
      GradCheckEntry e;
      e.array = p->name;
      e.index = i;
      e.analytic = p->grad.data[i];
      e.numeric = (up.value - down.value) / (2.0 * opt.step);
      e.rel_error = relative_error(e.analytic, e.numeric, opt.floor);
      e.skipped = opt.skip_kinks && up.signature != down.signature;
      e.pass = e.skipped || e.rel_error < opt.tolerance;
      if (e.skipped) {
        ++report.skipped;
        report.entries.push_back(std::move(e));
        continue;
      }
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.passed = report.passed && e.pass;
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

GradCheckReport gradcheck(const InputFn& fn, const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt) {
  std::vector<Parameter<double>> holders;
  holders.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) holders.emplace_back("input" + std::to_string(k), inputs[k]);
  std::vector<Parameter<double>*> ptrs;
  for (auto& h : holders) ptrs.push_back(&h);
  LossBuilder build = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (auto& h : holders) vars.push_back(tape.param(h));
    return fn(tape, vars);
  };
  return gradcheck_params(build, ptrs, opt);
}

}  // namespace mcae::diffcore
