from app.verification.verify import VerifyReport, verify_pod, verify_run, verify_steps

__all__ = ["VerifyReport", "verify_pod", "verify_run", "verify_steps"]
