#pragma once

#include "tubeground/autodiff.hpp"
#include "tubeground/dataset.hpp"
#include "tubeground/error.hpp"
#include "tubeground/eval.hpp"
#include "tubeground/features.hpp"
#include "tubeground/gradcheck.hpp"
#include "tubeground/gradsuite.hpp"
#include "tubeground/interactor.hpp"
#include "tubeground/linker.hpp"
#include "tubeground/objective.hpp"
#include "tubeground/prepared.hpp"
#include "tubeground/synth.hpp"
#include "tubeground/tensor.hpp"
#include "tubeground/trainer.hpp"
