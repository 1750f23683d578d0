from .report_generator_tool import TradeoffReportTool
from .verification_tools import GradcheckTool, KLVerificationTool, LRTVerificationTool

__all__ = ["GradcheckTool", "KLVerificationTool", "LRTVerificationTool", "TradeoffReportTool"]
