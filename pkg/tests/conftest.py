import numpy as np
import pytest
import torch

from seqground.decoder import GroundingModel
from seqground.types import ModelConfig


def tiny_config(**kw):
    base = dict(
        hidden_dim=8, num_heads=2, num_layers=1, num_queries=2, dropout=0.0,
        video_in_dim=5, diagram_in_dim=5, normalize_video_length=None,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_inputs(n=6, m=2, dim=5, batch=1, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    video = torch.randn(batch, n, dim, generator=g, dtype=dtype)
    diagrams = torch.randn(batch, m, dim, generator=g, dtype=dtype)
    return video, torch.ones(batch, n, dtype=torch.bool), diagrams, torch.ones(batch, m, dtype=torch.bool)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return GroundingModel(tiny_config()).eval()


def gradient_check(model, inputs, gts, weights, eps=1e-3):
    """Relative errors between autograd and central differences, one per scalar parameter."""
    from seqground.matching import grounding_loss

    model = model.double()
    inputs = [x.double() if x.is_floating_point() else x for x in inputs]
    with torch.no_grad():
        _, _, matches = grounding_loss(model(*inputs), gts, weights, model.cfg.use_aux_loss)

    def loss_value():
        return grounding_loss(model(*inputs), gts, weights, model.cfg.use_aux_loss, matches=matches)[0]

    model.zero_grad()
    loss_value().backward()
    errors = []
    for p in model.parameters():
        if not p.requires_grad:
            continue
        analytic = torch.zeros(p.numel(), dtype=p.dtype) if p.grad is None else p.grad.detach().clone().ravel()
        flat = p.data.view(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = loss_value().item()
                flat[idx] = orig - eps
                down = loss_value().item()
                flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[idx].item()
            scale = max(abs(a), abs(numeric))
            errors.append(0.0 if scale < 1e-7 else abs(a - numeric) / scale)
    return np.array(errors)


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _ACCEPTANCE[props["criterion"]] = (report.outcome, props.get("detail", ""), props.get("title", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcome, detail, title = _ACCEPTANCE[num]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {verdict}  {title}  {detail}".rstrip())
