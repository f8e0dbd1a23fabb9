from rest_framework.decorators import api_view
from django.http import JsonResponse
from django.utils import timezone
from .models import ExperimentRun
import logging

logger = logging.getLogger(__name__)


def success_response(data=None, message="Success", status=200):
    return JsonResponse({
        'success': True,
        'data': data,
        'message': message
    }, status=status)


def error_response(error="Error", message="Failed", status=400):
    return JsonResponse({
        'success': False,
        'error': error,
        'message': message
    }, status=status)


def run_summary(run):
    return {
        'run_id': run.run_id,
        'command': run.command,
        'config_digest': run.config_digest,
        'status': run.status,
        'verdict': run.verdict,
        'exit_code': run.exit_code,
        'error_message': run.error_message,
        'finished_at': run.finished_at.isoformat() if run.finished_at else None,
        'created_at': run.created_at.isoformat(),
    }


@api_view(['GET'])
def health_check(request):
    """Health check endpoint"""
    try:
        ExperimentRun.objects.count()

        health_data = {
            'status': 'healthy',
            'service': 'morse_workbench',
            'timestamp': timezone.now().isoformat()
        }

        return success_response(
            data=health_data,
            message="Workbench is healthy"
        )

    except Exception as e:
        logger.error(f"Health check failed: {e}")
        return error_response(
            error=str(e),
            message="Service health check failed",
            status=503
        )


@api_view(['GET'])
def run_stats(request):
    """Counts of recorded runs by status and verdict"""
    try:
        total_runs = ExperimentRun.objects.count()
        complete_runs = ExperimentRun.objects.filter(status='complete').count()
        failed_runs = ExperimentRun.objects.filter(status='failed').count()
        pending_runs = ExperimentRun.objects.filter(status='pending').count()
        passed_runs = ExperimentRun.objects.filter(verdict='pass').count()

        pass_rate = 0
        if complete_runs > 0:
            pass_rate = round((passed_runs / complete_runs) * 100, 2)

        stats = {
            'total_runs': total_runs,
            'complete_runs': complete_runs,
            'failed_runs': failed_runs,
            'pending_runs': pending_runs,
            'passed_runs': passed_runs,
            'pass_rate': pass_rate,
        }

        return success_response(
            data=stats,
            message="Run statistics retrieved successfully"
        )

    except Exception as e:
        logger.error(f"Error getting run stats: {e}")
        return error_response(
            error=str(e),
            message="Failed to retrieve run statistics",
            status=500
        )


@api_view(['GET'])
def run_list(request):
    """Recorded runs, newest first, filterable by command and status"""
    try:
        command = request.GET.get('command')
        status = request.GET.get('status')
        limit = int(request.GET.get('limit', 100))

        runs = ExperimentRun.objects.all().order_by('-created_at')

        if command:
            runs = runs.filter(command=command)
        if status:
            runs = runs.filter(status=status)

        return success_response(
            data=[run_summary(run) for run in runs[:limit]],
            message="Runs retrieved successfully"
        )

    except ValueError:
        return error_response(
            error="limit must be an integer",
            message="Invalid limit parameter",
            status=400
        )
    except Exception as e:
        logger.error(f"Error getting runs: {e}")
        return error_response(
            error=str(e),
            message="Failed to retrieve runs",
            status=500
        )


@api_view(['GET'])
def run_detail(request, run_id):
    """One run including its stored report"""
    try:
        run = ExperimentRun.objects.filter(run_id=run_id).first()
        if run is None:
            return error_response(
                error=f"Run {run_id} not found",
                message="Unknown run",
                status=404
            )

        data = run_summary(run)
        data['report'] = run.report
        data['output_dir'] = run.output_dir
        return success_response(
            data=data,
            message="Run retrieved successfully"
        )

    except Exception as e:
        logger.error(f"Error getting run {run_id}: {e}")
        return error_response(
            error=str(e),
            message="Failed to retrieve run",
            status=500
        )
