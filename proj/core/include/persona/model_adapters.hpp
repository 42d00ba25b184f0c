#pragma once

#include <memory>

#include "persona/safety_eval.hpp"
#include "persona/toy_lm.hpp"

namespace persona {

// Free-text channel over a toy model: hash-tokenizes the prompt,
// generates, and returns the new tokens as space-separated ids.
TextModel toy_text_model(std::shared_ptr<ToyLM> model,
                         GenerationParams params = {});

// Mean per-token log-probability of the continuation given the context.
LikelihoodModel toy_likelihood_model(std::shared_ptr<ToyLM> model);

}  // namespace persona
