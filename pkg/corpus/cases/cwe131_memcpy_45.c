/* Variant 45: allocation and overflowing copy split across two functions
 * that communicate through a static variable. */
#include <alloca.h>
#include <string.h>

#include "io.h"

static int * badData;

static void badSink(void)
{
    int * data = badData;
    {
        int source[10] = {0};
        memcpy(data, source, 10*sizeof(int));
        printIntLine(data[0]);
    }
}

static void bad(void)
{
    int * data;
    data = NULL;
    data = (int *)alloca(10);
    badData = data;
    badSink();
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
