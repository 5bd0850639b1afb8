#pragma once

#include "pmlgamm/band.hpp"
#include "pmlgamm/dataset.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/family.hpp"
#include "pmlgamm/gam.hpp"
#include "pmlgamm/gamm_laplace.hpp"
#include "pmlgamm/inner.hpp"
#include "pmlgamm/model.hpp"
#include "pmlgamm/optim.hpp"
#include "pmlgamm/pml.hpp"
#include "pmlgamm/quadrature.hpp"
#include "pmlgamm/splines.hpp"
#include "pmlgamm/study.hpp"
